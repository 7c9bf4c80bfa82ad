"""Backward recursions producing value matrices, gains, constants, and J*.

Value matrices P_t are indexed by (m0, ztilde) where ztilde is either None
(nothing received over the channel) or a 0-based local-mode index. The
per-step evaluation order is fixed: E, F, H, P, Htilde, Ptilde, K, Ktilde,
e, so each quantity reads only t+1 tables plus already-computed t entries.
"""

import datetime
import json
from dataclasses import dataclass, field

import numpy as np

from . import matkit
from .errors import DefinitenessError, MissingEntryError, SingularBlockError
from .model import assemble_system

PSD_SLACK = 1e-9

# ztilde values: None for "no transmission", 0-based int for a received mode.
EMPTY = None


def ztilde_values(kappa1):
    return [EMPTY] + list(range(kappa1))


def _get(G, m0, zt):
    try:
        return G[(m0, zt)]
    except KeyError:
        raise MissingEntryError(f"collection missing entry (m0={m0}, ztilde={zt!r})")


def op_pi_gamma(G, gamma, spec):
    """Conditional expectation of G(M0, Ztilde) given the channel bit."""
    m = spec.modes
    if gamma == 0:
        return sum(
            _get(G, m0, EMPTY) * m.pi_m0[m0] for m0 in range(m.kappa0)
        )
    return sum(
        _get(G, m0, m1) * (m.pi_m0[m0] * m.pi_m1[m1])
        for m0 in range(m.kappa0)
        for m1 in range(m.kappa1)
    )


def op_pi(G, spec):
    """Expectation of G(M0, Ztilde) over modes and the channel."""
    p1 = spec.channel.p1
    return (1.0 - p1) * op_pi_gamma(G, 0, spec) + p1 * op_pi_gamma(G, 1, spec)


def op_psi(G1, G2, spec):
    """Channel-split expectation: G1 on the failed branch, G2 on the successful one."""
    p1 = spec.channel.p1
    return (1.0 - p1) * op_pi_gamma(G1, 0, spec) + p1 * op_pi_gamma(G2, 1, spec)


@dataclass(frozen=True)
class StaticMatrices:
    """Mode-indexed matrices the recursion consumes; built once per solve."""

    L: list          # per m1: selector
    D: dict          # (m0, m1) -> [A B]
    D11: dict        # (m0, m1) -> [A11 B11]
    Daug: dict       # (m0, m1) -> D @ L[m1]
    Dempty: dict     # m0 -> sum_m1 pi(m1) Daug
    C: np.ndarray    # (T+1, k0, k1, n, n) blockdiag(Q, R)
    C11: np.ndarray  # (T+1, k0, k1, n1, n1) blockdiag(Q11, R11)
    Cempty: np.ndarray  # (T+1, k0, ne, ne) sum_m1 pi(m1) L' C L


def build_static(spec):
    d, m = spec.dims, spec.modes
    T = spec.T
    L = [matkit.build_L(d, m.kappa1, m1) for m1 in range(m.kappa1)]
    D, D11, Daug = {}, {}, {}
    for m0 in range(m.kappa0):
        for m1 in range(m.kappa1):
            _, _, Dm = assemble_system(spec, m0, m1)
            D[(m0, m1)] = Dm
            D11[(m0, m1)] = np.hstack(
                [spec.system.A11[m0, m1], spec.system.B11[m0, m1]]
            )
            Daug[(m0, m1)] = Dm @ L[m1]
    Dempty = {
        m0: sum(Daug[(m0, m1)] * m.pi_m1[m1] for m1 in range(m.kappa1))
        for m0 in range(m.kappa0)
    }

    n = d.d_x + d.d_u
    n1 = d.d_x1 + d.d_u1
    ne = d.d_x + d.d_u0 + m.kappa1 * d.d_u1
    C = np.zeros((T + 1, m.kappa0, m.kappa1, n, n))
    C11 = np.zeros((T + 1, m.kappa0, m.kappa1, n1, n1))
    Cempty = np.zeros((T + 1, m.kappa0, ne, ne))
    for t in range(T + 1):
        for m0 in range(m.kappa0):
            for m1 in range(m.kappa1):
                Q = spec.cost.Q[t, m0, m1]
                R = spec.cost.R[t, m0, m1]
                C[t, m0, m1, :d.d_x, :d.d_x] = Q
                C[t, m0, m1, d.d_x:, d.d_x:] = R
                C11[t, m0, m1, :d.d_x1, :d.d_x1] = Q[d.d_x0:, d.d_x0:]
                C11[t, m0, m1, d.d_x1:, d.d_x1:] = R[d.d_u0:, d.d_u0:]
                Cempty[t, m0] += (
                    L[m1].T @ C[t, m0, m1] @ L[m1] * m.pi_m1[m1]
                )
    return StaticMatrices(L=L, D=D, D11=D11, Daug=Daug, Dempty=Dempty, C=C, C11=C11, Cempty=Cempty)


@dataclass
class ValueTables:
    P: list       # t = 0..T+1, each dict (m0, zt) -> (d_x, d_x)
    Ptilde: list  # t = 0..T+1, each dict (m0, zt) -> (d_x1, d_x1)
    e: np.ndarray  # length T+2


@dataclass
class GainTables:
    K: list       # t = 0..T, dict (m0, zt) -> gain into vec(x0, mu)
    Ktilde: list  # t = 0..T, dict (m0, m1) -> (d_u1, d_x1)


@dataclass
class SolutionBundle:
    values: ValueTables
    gains: GainTables
    j_star: float
    solve_metadata: dict = field(default_factory=dict)


def _bottom_rows(M, d_x1):
    return M[-d_x1:, :]


def solve_backward(spec):
    """Run the coupled backward recursions and assemble the full solution."""
    d, m = spec.dims, spec.modes
    T = spec.T
    st = build_static(spec)
    zts = ztilde_values(m.kappa1)

    zero_P = np.zeros((d.d_x, d.d_x))
    zero_Pt = np.zeros((d.d_x1, d.d_x1))
    P = [None] * (T + 2)
    Ptilde = [None] * (T + 2)
    e = np.zeros(T + 2)
    P[T + 1] = {(m0, zt): zero_P.copy() for m0 in range(m.kappa0) for zt in zts}
    Ptilde[T + 1] = {(m0, zt): zero_Pt.copy() for m0 in range(m.kappa0) for zt in zts}
    K = [None] * (T + 1)
    Ktilde = [None] * (T + 1)

    for t in range(T, -1, -1):
        pi_next = op_pi(P[t + 1], spec)
        P11_next = {k: v[d.d_x0:, d.d_x0:] for k, v in P[t + 1].items()}
        psi_next = op_psi(Ptilde[t + 1], P11_next, spec)

        P[t], Ptilde[t] = {}, {}
        K[t], Ktilde[t] = {}, {}
        for m0 in range(m.kappa0):
            # ztilde = empty branch
            De = st.Dempty[m0]
            E = De.T @ pi_next @ De
            F = -_bottom_rows(De, d.d_x1).T @ psi_next @ _bottom_rows(De, d.d_x1)
            for m1 in range(m.kappa1):
                Da1 = _bottom_rows(st.Daug[(m0, m1)], d.d_x1)
                F = F + Da1.T @ psi_next @ Da1 * m.pi_m1[m1]
            H_empty = matkit.sym(st.Cempty[t, m0] + E + F)
            try:
                P[t][(m0, EMPTY)] = matkit.schur_complement(H_empty, d.d_x)
            except SingularBlockError as exc:
                raise SingularBlockError(
                    f"H^UU not PD at t={t}, m0={m0 + 1}, ztilde=empty: {exc}"
                ) from exc
            blocks = matkit.partition(H_empty, d.d_x)
            K[t][(m0, EMPTY)] = -matkit.solve_pd(blocks.uu, blocks.ux)

            # ztilde = m1 branches
            for m1 in range(m.kappa1):
                Dm = st.D[(m0, m1)]
                H = matkit.sym(st.C[t, m0, m1] + Dm.T @ pi_next @ Dm)
                try:
                    P[t][(m0, m1)] = matkit.schur_complement(H, d.d_x)
                except SingularBlockError as exc:
                    raise SingularBlockError(
                        f"H^UU not PD at t={t}, m0={m0 + 1}, ztilde=m{m1 + 1}: {exc}"
                    ) from exc
                blocks = matkit.partition(H, d.d_x)
                K[t][(m0, m1)] = -matkit.solve_pd(blocks.uu, blocks.ux)

            # local value recursion
            pt_empty = np.zeros((d.d_x1, d.d_x1))
            for m1 in range(m.kappa1):
                D11 = st.D11[(m0, m1)]
                Ht = matkit.sym(st.C11[t, m0, m1] + D11.T @ psi_next @ D11)
                try:
                    sc = matkit.schur_complement(Ht, d.d_x1)
                except SingularBlockError as exc:
                    raise SingularBlockError(
                        f"Htilde^U1U1 not PD at t={t}, m0={m0 + 1}, m1={m1 + 1}: {exc}"
                    ) from exc
                Ptilde[t][(m0, m1)] = sc
                pt_empty = pt_empty + m.pi_m1[m1] * sc
                tb = matkit.partition(Ht, d.d_x1)
                Ktilde[t][(m0, m1)] = -matkit.solve_pd(tb.uu, tb.ux)
            Ptilde[t][(m0, EMPTY)] = matkit.sym(pt_empty)

        for key, val in P[t].items():
            lo = matkit.min_eig(val)
            if lo < -PSD_SLACK * max(1.0, float(np.linalg.norm(val, 2))):
                raise DefinitenessError(
                    f"P at t={t}, key={key} lost positive semi-definiteness", min_eig=lo
                )
        for key, val in Ptilde[t].items():
            lo = matkit.min_eig(val)
            if lo < -PSD_SLACK * max(1.0, float(np.linalg.norm(val, 2))):
                raise DefinitenessError(
                    f"Ptilde at t={t}, key={key} lost positive semi-definiteness", min_eig=lo
                )

        P00_next = {k: v[:d.d_x0, :d.d_x0] for k, v in P[t + 1].items()}
        e[t] = (
            e[t + 1]
            + float(np.trace(op_pi(P00_next, spec) @ spec.stoch.covW0[t]))
            + float(np.trace(psi_next @ spec.stoch.covW1[t]))
        )

    values = ValueTables(P=P, Ptilde=Ptilde, e=e)
    gains = GainTables(K=K, Ktilde=Ktilde)
    j_star = analytic_cost(spec, values)
    meta = {
        "psd_slack": PSD_SLACK,
        "solved_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    return SolutionBundle(values=values, gains=gains, j_star=j_star, solve_metadata=meta)


def analytic_cost(spec, values):
    """Expected optimal total cost E[V_0].

    X_0^0 and X_0^1 are independent, so the quadratic-form expectation splits
    into a mean term plus traces against the matching diagonal blocks of P_0.
    On the failed-channel branch the local state enters through the prior
    belief: its covariance multiplies Ptilde_0 rather than P_0^11.
    """
    d, m, st = spec.dims, spec.modes, spec.stoch
    p1 = spec.channel.p1
    mu = np.concatenate([st.mu_x0, st.mu_x1])

    total = float(values.e[0])
    fail = 0.0
    for m0 in range(m.kappa0):
        P0 = values.P[0][(m0, EMPTY)]
        fail += m.pi_m0[m0] * (
            matkit.qf(P0, mu)
            + float(np.trace(P0[:d.d_x0, :d.d_x0] @ st.cov_x0))
            + float(np.trace(values.Ptilde[0][(m0, EMPTY)] @ st.cov_x1))
        )
    total += (1.0 - p1) * fail

    ok = 0.0
    for m0 in range(m.kappa0):
        for m1 in range(m.kappa1):
            P0 = values.P[0][(m0, m1)]
            ok += m.pi_m0[m0] * m.pi_m1[m1] * (
                matkit.qf(P0, mu)
                + float(np.trace(P0[:d.d_x0, :d.d_x0] @ st.cov_x0))
                + float(np.trace(P0[d.d_x0:, d.d_x0:] @ st.cov_x1))
            )
    total += p1 * ok
    return float(total)


# --- serialization ----------------------------------------------------------


def _zt_key(zt):
    return "empty" if zt is EMPTY else f"m{zt + 1}"


def _zt_from_key(key):
    if key == "empty":
        return EMPTY
    return int(key[1:]) - 1


def _tables_to_json(tables):
    out = {}
    for t, table in enumerate(tables):
        out[str(t)] = {}
        seen_m0 = sorted({k[0] for k in table})
        for m0 in seen_m0:
            out[str(t)][str(m0 + 1)] = {
                _zt_key(zt): table[(mm0, zt)].tolist()
                for (mm0, zt) in table
                if mm0 == m0
            }
    return out


def bundle_to_json(bundle):
    return {
        "P": _tables_to_json(bundle.values.P),
        "Ptilde": _tables_to_json(bundle.values.Ptilde),
        "K": _tables_to_json(bundle.gains.K),
        "Ktilde": {
            str(t): {
                str(m0 + 1): {
                    f"m{m1 + 1}": bundle.gains.Ktilde[t][(m0, m1)].tolist()
                    for (mm0, m1) in bundle.gains.Ktilde[t]
                    if mm0 == m0
                }
                for m0 in sorted({k[0] for k in bundle.gains.Ktilde[t]})
            }
            for t in range(len(bundle.gains.Ktilde))
        },
        "e": bundle.values.e.tolist(),
        "j_star": bundle.j_star,
        "solve_metadata": bundle.solve_metadata,
    }


def _tables_from_json(obj):
    tables = [None] * len(obj)
    for t_key, per_m0 in obj.items():
        table = {}
        for m0_key, per_zt in per_m0.items():
            m0 = int(m0_key) - 1
            for zt_key, mat in per_zt.items():
                table[(m0, _zt_from_key(zt_key))] = np.asarray(mat, dtype=float)
        tables[int(t_key)] = table
    return tables


def bundle_from_json(obj):
    P = _tables_from_json(obj["P"])
    Ptilde = _tables_from_json(obj["Ptilde"])
    K = _tables_from_json(obj["K"])
    Ktilde = [None] * len(obj["Ktilde"])
    for t_key, per_m0 in obj["Ktilde"].items():
        table = {}
        for m0_key, per_m1 in per_m0.items():
            for m1_key, mat in per_m1.items():
                table[(int(m0_key) - 1, int(m1_key[1:]) - 1)] = np.asarray(mat, dtype=float)
        Ktilde[int(t_key)] = table
    return SolutionBundle(
        values=ValueTables(P=P, Ptilde=Ptilde, e=np.asarray(obj["e"], dtype=float)),
        gains=GainTables(K=K, Ktilde=Ktilde),
        j_star=float(obj["j_star"]),
        solve_metadata=dict(obj.get("solve_metadata", {})),
    )


def save_bundle(bundle, path):
    with open(path, "w") as fh:
        json.dump(bundle_to_json(bundle), fh, indent=1)


def load_bundle(path):
    with open(path) as fh:
        return bundle_from_json(json.load(fh))
