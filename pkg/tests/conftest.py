import numpy as np
import pytest

from ncslqr import model

ONE = [[1.0]]


def s1_config(p1=0.5, mu_x0=0.0, mu_x1=0.0, cov_x0=1.0, cov_x1=1.0):
    """Smallest legal instance: everything scalar, T = 0, Q = R = I."""
    return {
        "dims": {"d_x0": 1, "d_x1": 1, "d_u0": 1, "d_u1": 1},
        "modes": {"kappa0": 1, "kappa1": 1, "pi_m0": [1.0], "pi_m1": [1.0]},
        "channel": {"p1": p1},
        "system": {
            "A00": [ONE], "B00": [ONE],
            "A10": [ONE], "A11": [ONE], "B10": [ONE], "B11": [ONE],
        },
        "cost": {"Q": [[[1.0, 0.0], [0.0, 1.0]]], "R": [[[1.0, 0.0], [0.0, 1.0]]], "time_varying": False},
        "stoch": {
            "T": 0,
            "covW0": ONE, "covW1": ONE,
            "init": {
                "mu_x0": [mu_x0], "cov_x0": [[cov_x0]],
                "mu_x1": [mu_x1], "cov_x1": [[cov_x1]],
            },
            "family": "gaussian",
        },
    }


def s2_config(p1=0.5, family="gaussian"):
    """Scalar hand instance: all system blocks 1, Q = R = I, T = 1."""
    cfg = s1_config(p1=p1)
    cfg["stoch"]["T"] = 1
    cfg["stoch"]["family"] = family
    return cfg


@pytest.fixture
def s1_spec():
    return model.load_config(s1_config())


@pytest.fixture
def s2_spec():
    return model.load_config(s2_config())


def rand_psd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T / n + 0.1 * np.eye(n))


def random_config(rng, p1=None, kappa1=None, T=None):
    """Random battery instance: block dims <= 2, kappa <= 2, T <= 3."""
    d = {k: int(rng.integers(1, 3)) for k in ("d_x0", "d_x1", "d_u0", "d_u1")}
    k0 = int(rng.integers(1, 3))
    k1 = int(rng.integers(1, 3)) if kappa1 is None else kappa1
    if T is None:
        T = int(rng.integers(0, 4))
    if p1 is None:
        p1 = float(rng.choice([0.0, 0.3, 0.7, 1.0]))

    def pvec(k):
        v = rng.random(k) + 0.2
        return (v / v.sum()).tolist()

    def mats(n_r, n_c, count, scale=0.7):
        return [(scale * rng.standard_normal((n_r, n_c))).tolist() for _ in range(count)]

    dx = d["d_x0"] + d["d_x1"]
    du = d["d_u0"] + d["d_u1"]
    return {
        "dims": d,
        "modes": {"kappa0": k0, "kappa1": k1, "pi_m0": pvec(k0), "pi_m1": pvec(k1)},
        "channel": {"p1": p1},
        "system": {
            "A00": mats(d["d_x0"], d["d_x0"], k0),
            "B00": mats(d["d_x0"], d["d_u0"], k0),
            "A10": mats(d["d_x1"], d["d_x0"], k0 * k1),
            "A11": mats(d["d_x1"], d["d_x1"], k0 * k1),
            "B10": mats(d["d_x1"], d["d_u0"], k0 * k1),
            "B11": mats(d["d_x1"], d["d_u1"], k0 * k1),
        },
        "cost": {
            "Q": [rand_psd(rng, dx).tolist() for _ in range(k0 * k1)],
            "R": [rand_psd(rng, du, 0.5).tolist() for _ in range(k0 * k1)],
            "time_varying": False,
        },
        "stoch": {
            "T": T,
            "covW0": rand_psd(rng, d["d_x0"], 0.3).tolist(),
            "covW1": rand_psd(rng, d["d_x1"], 0.3).tolist(),
            "init": {
                "mu_x0": rng.standard_normal(d["d_x0"]).tolist(),
                "cov_x0": rand_psd(rng, d["d_x0"]).tolist(),
                "mu_x1": rng.standard_normal(d["d_x1"]).tolist(),
                "cov_x1": rand_psd(rng, d["d_x1"]).tolist(),
            },
            "family": "gaussian",
        },
    }


def battery_specs(n=20, seed=1):
    """Deterministic battery covering all four channel success rates."""
    rng = np.random.default_rng(seed)
    p1s = [0.0, 0.3, 0.7, 1.0]
    return [
        model.load_config(random_config(rng, p1=p1s[i % 4]))
        for i in range(n)
    ]


@pytest.fixture(scope="session")
def battery():
    return battery_specs()
