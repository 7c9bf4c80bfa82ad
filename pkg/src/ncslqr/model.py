"""Problem definition: load, validate, and assemble the two-plant instance.

Users supply the six system blocks (A00, B00 per global mode; A10, A11,
B10, B11 per mode pair), never full A/B matrices, so the block-triangular
structure of the dynamics is guaranteed by construction. Mode values are
1-based in config files and 0-based everywhere inside the package; the
loader converts exactly once.
"""

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import matkit
from .errors import ParseError, ProbabilityError, ShapeError

PROB_TOL = 1e-12


@dataclass(frozen=True)
class Dims:
    d_x0: int
    d_x1: int
    d_u0: int
    d_u1: int

    def __post_init__(self):
        for name in ("d_x0", "d_x1", "d_u0", "d_u1"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ShapeError(f"dims.{name} must be a positive integer, got {v!r}")

    @property
    def d_x(self):
        return self.d_x0 + self.d_x1

    @property
    def d_u(self):
        return self.d_u0 + self.d_u1


@dataclass(frozen=True)
class ModeSpec:
    kappa0: int
    kappa1: int
    pi_m0: np.ndarray
    pi_m1: np.ndarray

    def __post_init__(self):
        for name in ("kappa0", "kappa1"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ShapeError(f"modes.{name} must be a positive integer, got {v!r}")
        for name, kappa in (("pi_m0", self.kappa0), ("pi_m1", self.kappa1)):
            p = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            object.__setattr__(self, name, p)
            if p.size != kappa:
                raise ShapeError(f"modes.{name} must have length {kappa}, got {p.size}")
            if np.any(p < 0):
                raise ProbabilityError(f"modes.{name} has a negative entry")
            if abs(p.sum() - 1.0) > PROB_TOL:
                raise ProbabilityError(
                    f"modes.{name} sums to {p.sum():.15g}, expected 1"
                )


@dataclass(frozen=True)
class ChannelSpec:
    p1: float

    def __post_init__(self):
        if not 0.0 <= self.p1 <= 1.0:
            raise ProbabilityError(f"channel.p1 must be in [0, 1], got {self.p1}")

    @property
    def p0(self):
        return 1.0 - self.p1


def _as_array(value, shape, name):
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        raise ShapeError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class SystemBlocks:
    """Per-mode dynamics blocks. A00/B00 depend only on the global mode."""

    A00: np.ndarray  # (kappa0, d_x0, d_x0)
    B00: np.ndarray  # (kappa0, d_x0, d_u0)
    A10: np.ndarray  # (kappa0, kappa1, d_x1, d_x0)
    A11: np.ndarray  # (kappa0, kappa1, d_x1, d_x1)
    B10: np.ndarray  # (kappa0, kappa1, d_x1, d_u0)
    B11: np.ndarray  # (kappa0, kappa1, d_x1, d_u1)

    @staticmethod
    def from_fields(dims, modes, A00, B00, A10, A11, B10, B11):
        k0, k1 = modes.kappa0, modes.kappa1
        return SystemBlocks(
            A00=_as_array(A00, (k0, dims.d_x0, dims.d_x0), "system.A00"),
            B00=_as_array(B00, (k0, dims.d_x0, dims.d_u0), "system.B00"),
            A10=_as_array(A10, (k0, k1, dims.d_x1, dims.d_x0), "system.A10"),
            A11=_as_array(A11, (k0, k1, dims.d_x1, dims.d_x1), "system.A11"),
            B10=_as_array(B10, (k0, k1, dims.d_x1, dims.d_u0), "system.B10"),
            B11=_as_array(B11, (k0, k1, dims.d_x1, dims.d_u1), "system.B11"),
        )


@dataclass(frozen=True)
class CostSpec:
    """Stage cost weights, fully broadcast to shape (T+1, kappa0, kappa1, n, n)."""

    Q: np.ndarray
    R: np.ndarray
    time_varying: bool = False

    def validate(self, name_prefix="cost"):
        for t in range(self.Q.shape[0]):
            for m0 in range(self.Q.shape[1]):
                for m1 in range(self.Q.shape[2]):
                    where = f"{name_prefix}.Q[t={t}, m0={m0 + 1}, m1={m1 + 1}]"
                    matkit.assert_psd(self.Q[t, m0, m1], name=where)
                    where = f"{name_prefix}.R[t={t}, m0={m0 + 1}, m1={m1 + 1}]"
                    matkit.assert_pd(self.R[t, m0, m1], name=where)


@dataclass(frozen=True)
class StochasticsSpec:
    T: int
    covW0: np.ndarray  # (T+1, d_x0, d_x0)
    covW1: np.ndarray  # (T+1, d_x1, d_x1)
    mu_x0: np.ndarray
    cov_x0: np.ndarray
    mu_x1: np.ndarray
    cov_x1: np.ndarray
    family: str = "gaussian"

    def validate(self):
        if not (isinstance(self.T, int) and self.T >= 0):
            raise ShapeError(f"stoch.T must be a nonnegative integer, got {self.T!r}")
        if self.family not in ("gaussian", "zero"):
            raise ParseError(f"stoch.family must be 'gaussian' or 'zero', got {self.family!r}")
        for t in range(self.T + 1):
            matkit.assert_psd(self.covW0[t], name=f"stoch.covW0[t={t}]")
            matkit.assert_psd(self.covW1[t], name=f"stoch.covW1[t={t}]")
        matkit.assert_psd(self.cov_x0, name="stoch.init.cov_x0")
        matkit.assert_psd(self.cov_x1, name="stoch.init.cov_x1")


@dataclass(frozen=True)
class ProblemSpec:
    dims: Dims
    modes: ModeSpec
    channel: ChannelSpec
    system: SystemBlocks
    cost: CostSpec
    stoch: StochasticsSpec
    source: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        self.cost.validate()
        self.stoch.validate()
        d = self.dims
        expect = {
            "cost.Q": (self.cost.Q, (self.stoch.T + 1, self.modes.kappa0, self.modes.kappa1, d.d_x, d.d_x)),
            "cost.R": (self.cost.R, (self.stoch.T + 1, self.modes.kappa0, self.modes.kappa1, d.d_u, d.d_u)),
            "stoch.covW0": (self.stoch.covW0, (self.stoch.T + 1, d.d_x0, d.d_x0)),
            "stoch.covW1": (self.stoch.covW1, (self.stoch.T + 1, d.d_x1, d.d_x1)),
            "stoch.mu_x0": (self.stoch.mu_x0, (d.d_x0,)),
            "stoch.mu_x1": (self.stoch.mu_x1, (d.d_x1,)),
            "stoch.cov_x0": (self.stoch.cov_x0, (d.d_x0, d.d_x0)),
            "stoch.cov_x1": (self.stoch.cov_x1, (d.d_x1, d.d_x1)),
        }
        for name, (arr, shape) in expect.items():
            if arr.shape != shape:
                raise ShapeError(f"{name} must have shape {shape}, got {arr.shape}")

    @property
    def T(self):
        return self.stoch.T


def assemble_system(spec, m0, m1):
    """Full (A, B, D) for one mode pair; upper-right zero blocks are bit-zero."""
    d = spec.dims
    s = spec.system
    A = np.zeros((d.d_x, d.d_x))
    A[:d.d_x0, :d.d_x0] = s.A00[m0]
    A[d.d_x0:, :d.d_x0] = s.A10[m0, m1]
    A[d.d_x0:, d.d_x0:] = s.A11[m0, m1]
    B = np.zeros((d.d_x, d.d_u))
    B[:d.d_x0, :d.d_u0] = s.B00[m0]
    B[d.d_x0:, :d.d_u0] = s.B10[m0, m1]
    B[d.d_x0:, d.d_u0:] = s.B11[m0, m1]
    D = np.hstack([A, B])
    return A, B, D


# --- config file handling ---------------------------------------------------
#
# Mode-pair lists in config files are flat and m1-major: the entry for
# (m0, m1), both 1-based, sits at index (m1 - 1) * kappa0 + (m0 - 1).


def _require(mapping, key, where):
    if not isinstance(mapping, dict) or key not in mapping:
        raise ParseError(f"missing field '{key}' in {where}")
    return mapping[key]


def _pair_list_to_array(entries, k0, k1, block_shape, name):
    arr = np.asarray(entries, dtype=float)
    if arr.shape != (k0 * k1,) + block_shape:
        raise ShapeError(
            f"{name} must be a list of {k0 * k1} matrices of shape {block_shape}, "
            f"got array shape {arr.shape}"
        )
    out = np.empty((k0, k1) + block_shape)
    for m1 in range(k1):
        for m0 in range(k0):
            out[m0, m1] = arr[m1 * k0 + m0]
    return out


def _array_to_pair_list(arr):
    k0, k1 = arr.shape[:2]
    return [arr[m0, m1].tolist() for m1 in range(k1) for m0 in range(k0)]


def _broadcast_time(value, T, block_shape, name, symmetrize=False):
    arr = np.asarray(value, dtype=float)
    if arr.shape == block_shape:
        arr = np.broadcast_to(arr, (T + 1,) + block_shape).copy()
    elif arr.shape != (T + 1,) + block_shape:
        raise ShapeError(
            f"{name} must have shape {block_shape} or {(T + 1,) + block_shape}, "
            f"got {arr.shape}"
        )
    else:
        arr = arr.copy()
    if symmetrize:
        for t in range(T + 1):
            arr[t] = matkit.check_symmetric(arr[t], name=f"{name}[t={t}]")
    return arr


def _load_cost(cost_cfg, dims, modes, T):
    time_varying = bool(cost_cfg.get("time_varying", False))
    out = {}
    for key, n in (("Q", dims.d_x), ("R", dims.d_u)):
        raw = _require(cost_cfg, key, "cost")
        if time_varying:
            if not isinstance(raw, list) or len(raw) != T + 1:
                raise ShapeError(f"cost.{key} must list T+1={T + 1} entries when time_varying")
            per_t = [
                _pair_list_to_array(e, modes.kappa0, modes.kappa1, (n, n), f"cost.{key}[t={t}]")
                for t, e in enumerate(raw)
            ]
            arr = np.stack(per_t)
        else:
            pairs = _pair_list_to_array(raw, modes.kappa0, modes.kappa1, (n, n), f"cost.{key}")
            arr = np.broadcast_to(pairs, (T + 1,) + pairs.shape).copy()
        for t in range(T + 1):
            for m0 in range(modes.kappa0):
                for m1 in range(modes.kappa1):
                    arr[t, m0, m1] = matkit.check_symmetric(
                        arr[t, m0, m1], name=f"cost.{key}[t={t}, m0={m0 + 1}, m1={m1 + 1}]"
                    )
        out[key] = arr
    return CostSpec(Q=out["Q"], R=out["R"], time_varying=time_varying)


def load_config(cfg):
    """Build a validated ProblemSpec from an already-parsed config dict."""
    dims_cfg = _require(cfg, "dims", "config")
    dims = Dims(
        d_x0=int(_require(dims_cfg, "d_x0", "dims")),
        d_x1=int(_require(dims_cfg, "d_x1", "dims")),
        d_u0=int(_require(dims_cfg, "d_u0", "dims")),
        d_u1=int(_require(dims_cfg, "d_u1", "dims")),
    )
    modes_cfg = _require(cfg, "modes", "config")
    modes = ModeSpec(
        kappa0=int(_require(modes_cfg, "kappa0", "modes")),
        kappa1=int(_require(modes_cfg, "kappa1", "modes")),
        pi_m0=np.asarray(_require(modes_cfg, "pi_m0", "modes"), dtype=float),
        pi_m1=np.asarray(_require(modes_cfg, "pi_m1", "modes"), dtype=float),
    )
    channel = ChannelSpec(p1=float(_require(_require(cfg, "channel", "config"), "p1", "channel")))

    sys_cfg = _require(cfg, "system", "config")
    k0, k1 = modes.kappa0, modes.kappa1
    A00 = _as_array(_require(sys_cfg, "A00", "system"), (k0, dims.d_x0, dims.d_x0), "system.A00")
    B00 = _as_array(_require(sys_cfg, "B00", "system"), (k0, dims.d_x0, dims.d_u0), "system.B00")
    system = SystemBlocks(
        A00=A00,
        B00=B00,
        A10=_pair_list_to_array(_require(sys_cfg, "A10", "system"), k0, k1, (dims.d_x1, dims.d_x0), "system.A10"),
        A11=_pair_list_to_array(_require(sys_cfg, "A11", "system"), k0, k1, (dims.d_x1, dims.d_x1), "system.A11"),
        B10=_pair_list_to_array(_require(sys_cfg, "B10", "system"), k0, k1, (dims.d_x1, dims.d_u0), "system.B10"),
        B11=_pair_list_to_array(_require(sys_cfg, "B11", "system"), k0, k1, (dims.d_x1, dims.d_u1), "system.B11"),
    )

    stoch_cfg = _require(cfg, "stoch", "config")
    T = int(_require(stoch_cfg, "T", "stoch"))
    if T < 0:
        raise ShapeError(f"stoch.T must be >= 0, got {T}")
    init_cfg = _require(stoch_cfg, "init", "stoch")
    stoch = StochasticsSpec(
        T=T,
        covW0=_broadcast_time(
            _require(stoch_cfg, "covW0", "stoch"), T, (dims.d_x0, dims.d_x0), "stoch.covW0", symmetrize=True
        ),
        covW1=_broadcast_time(
            _require(stoch_cfg, "covW1", "stoch"), T, (dims.d_x1, dims.d_x1), "stoch.covW1", symmetrize=True
        ),
        mu_x0=_as_array(_require(init_cfg, "mu_x0", "stoch.init"), (dims.d_x0,), "stoch.init.mu_x0"),
        cov_x0=matkit.check_symmetric(
            _as_array(_require(init_cfg, "cov_x0", "stoch.init"), (dims.d_x0, dims.d_x0), "stoch.init.cov_x0"),
            name="stoch.init.cov_x0",
        ),
        mu_x1=_as_array(_require(init_cfg, "mu_x1", "stoch.init"), (dims.d_x1,), "stoch.init.mu_x1"),
        cov_x1=matkit.check_symmetric(
            _as_array(_require(init_cfg, "cov_x1", "stoch.init"), (dims.d_x1, dims.d_x1), "stoch.init.cov_x1"),
            name="stoch.init.cov_x1",
        ),
        family=str(stoch_cfg.get("family", "gaussian")),
    )

    cost = _load_cost(_require(cfg, "cost", "config"), dims, modes, T)
    return ProblemSpec(dims=dims, modes=modes, channel=channel, system=system, cost=cost, stoch=stoch, source=cfg)


def load_problem(path):
    """Load and validate a problem instance from a JSON config file."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON in {path}: {exc}") from exc
    return load_config(cfg)


def problem_to_config(spec):
    """Serialize back to the config-dict form accepted by load_config."""
    d, m, st, c = spec.dims, spec.modes, spec.stoch, spec.cost
    cost_cfg = {"time_varying": c.time_varying}
    for key, arr in (("Q", c.Q), ("R", c.R)):
        if c.time_varying:
            cost_cfg[key] = [_array_to_pair_list(arr[t]) for t in range(st.T + 1)]
        else:
            cost_cfg[key] = _array_to_pair_list(arr[0])
    return {
        "dims": {"d_x0": d.d_x0, "d_x1": d.d_x1, "d_u0": d.d_u0, "d_u1": d.d_u1},
        "modes": {
            "kappa0": m.kappa0,
            "kappa1": m.kappa1,
            "pi_m0": m.pi_m0.tolist(),
            "pi_m1": m.pi_m1.tolist(),
        },
        "channel": {"p1": spec.channel.p1},
        "system": {
            "A00": spec.system.A00.tolist(),
            "B00": spec.system.B00.tolist(),
            "A10": _array_to_pair_list(spec.system.A10),
            "A11": _array_to_pair_list(spec.system.A11),
            "B10": _array_to_pair_list(spec.system.B10),
            "B11": _array_to_pair_list(spec.system.B11),
        },
        "cost": cost_cfg,
        "stoch": {
            "T": st.T,
            "covW0": [st.covW0[t].tolist() for t in range(st.T + 1)],
            "covW1": [st.covW1[t].tolist() for t in range(st.T + 1)],
            "init": {
                "mu_x0": st.mu_x0.tolist(),
                "cov_x0": st.cov_x0.tolist(),
                "mu_x1": st.mu_x1.tolist(),
                "cov_x1": st.cov_x1.tolist(),
            },
            "family": st.family,
        },
    }
