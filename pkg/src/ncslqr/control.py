"""Executable controllers built on top of a solved bundle.

The optimal decentralized policy follows the solved gain tables: the global
controller applies the (m0, ztilde)-indexed gain to vec(x0, xhat); the local
controller adds an innovation term through the local gain when nothing was
transmitted. Both controllers maintain the same common estimate xhat of the
local state, updated by the three-branch recursion keyed on consecutive
channel bits.

Reference policies (zero input, a certainty-equivalent heuristic on the
centralized gains, and the full-information centralized controller) live
here too, behind the same interface, so the simulator and the exact
evaluator can treat every policy as a family of time-varying linear maps of
(x0, x1, xhat).
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import SingularBlockError
from .model import assemble_system
from .solver import EMPTY


@dataclass
class EstimatorState:
    """Common estimate of the local state, mu(theta_t)."""

    x_hat1: np.ndarray


@dataclass
class Prescription:
    """Per-step output of the common-information coordinator."""

    u0: np.ndarray
    qbar: np.ndarray               # (kappa1, d_u1); rows for unobserved modes are 0 when ztilde != empty
    ktilde: Optional[dict] = None  # (m0, m1) -> gain; None when ztilde != empty
    ztilde: object = EMPTY
    m0: int = 0


@dataclass
class Observation:
    x0: np.ndarray
    m0: int
    gamma: int
    z: Optional[np.ndarray] = None
    ztilde: object = EMPTY
    x1: Optional[np.ndarray] = None
    m1: Optional[int] = None


def estimator_init(spec, obs_0):
    """xhat_0 is the prior mean, or the transmitted state on success."""
    if obs_0.gamma == 1:
        return EstimatorState(x_hat1=np.array(obs_0.z, dtype=float))
    return EstimatorState(x_hat1=spec.stoch.mu_x1.copy())


def compute_prescription(bundle, spec, t, m0, ztilde, x0, est):
    d, m = spec.dims, spec.modes
    xin = np.concatenate([x0, est.x_hat1])
    qbar = np.zeros((m.kappa1, d.d_u1))
    if ztilde is EMPTY:
        v = bundle.gains.K[t][(m0, EMPTY)] @ xin
        u0 = v[:d.d_u0]
        qbar[:] = v[d.d_u0:].reshape(m.kappa1, d.d_u1)
        ktilde = {
            (m0, m1): bundle.gains.Ktilde[t][(m0, m1)] for m1 in range(m.kappa1)
        }
        return Prescription(u0=u0, qbar=qbar, ktilde=ktilde, ztilde=EMPTY, m0=m0)
    v = bundle.gains.K[t][(m0, ztilde)] @ xin
    qbar[ztilde] = v[d.d_u0:]
    return Prescription(u0=v[:d.d_u0], qbar=qbar, ktilde=None, ztilde=ztilde, m0=m0)


def local_action(presc, x1, m1, est):
    """u1 = qbar(m1) plus the innovation term when nothing was transmitted."""
    if presc.ztilde is EMPTY:
        gain = presc.ktilde[(presc.m0, m1)]
        return presc.qbar[m1] + gain @ (x1 - est.x_hat1)
    # Successful transmission: the prescription already pins qbar(ztilde)
    # and the local mode observed by C0 is the true one.
    return presc.qbar[presc.ztilde].copy()


def estimator_update(spec, bundle, t, est, x0, m0, ztilde_t, presc, z_next):
    """Three-branch conditional-mean recursion for xhat."""
    d, m = spec.dims, spec.modes
    if z_next is not None:
        return EstimatorState(x_hat1=np.array(z_next, dtype=float))
    if ztilde_t is EMPTY:
        x_next = np.zeros(d.d_x1)
        for m1 in range(m.kappa1):
            _, _, D = assemble_system(spec, m0, m1)
            s = np.concatenate([x0, est.x_hat1, presc.u0, presc.qbar[m1]])
            x_next += m.pi_m1[m1] * (D[d.d_x0:, :] @ s)
        return EstimatorState(x_hat1=x_next)
    _, _, D = assemble_system(spec, m0, ztilde_t)
    s = np.concatenate([x0, est.x_hat1, presc.u0, presc.qbar[ztilde_t]])
    return EstimatorState(x_hat1=D[d.d_x0:, :] @ s)


# --- centralized oracle -----------------------------------------------------


@dataclass
class CentralizedSolution:
    """Full-information switched-LQR tables; independent of the solver module."""

    P: list  # t = 0..T+1, dict (m0, m1) -> (d_x, d_x)
    K: list  # t = 0..T, dict (m0, m1) -> (d_u, d_x)


def centralized_solve(spec):
    """Standard switched-LQR backward recursion with i.i.d. modes.

    Written directly against numpy (no shared code with the decentralized
    recursion) so it can serve as a cross-check oracle at p1 = 1.
    """
    d, m = spec.dims, spec.modes
    T = spec.T
    P = [None] * (T + 2)
    K = [None] * (T + 1)
    P[T + 1] = {
        (m0, m1): np.zeros((d.d_x, d.d_x))
        for m0 in range(m.kappa0)
        for m1 in range(m.kappa1)
    }
    for t in range(T, -1, -1):
        Pbar = np.zeros((d.d_x, d.d_x))
        for m0 in range(m.kappa0):
            for m1 in range(m.kappa1):
                Pbar += m.pi_m0[m0] * m.pi_m1[m1] * P[t + 1][(m0, m1)]
        P[t], K[t] = {}, {}
        for m0 in range(m.kappa0):
            for m1 in range(m.kappa1):
                A, B, _ = assemble_system(spec, m0, m1)
                Q = spec.cost.Q[t, m0, m1]
                R = spec.cost.R[t, m0, m1]
                Huu = R + B.T @ Pbar @ B
                Hux = B.T @ Pbar @ A
                lo = float(np.linalg.eigvalsh(0.5 * (Huu + Huu.T)).min())
                if lo <= 1e-10 * max(1.0, float(np.linalg.norm(Huu, 2))):
                    raise SingularBlockError(
                        f"centralized H^UU not PD at t={t}, m0={m0 + 1}, m1={m1 + 1}"
                    )
                Kt = -np.linalg.solve(Huu, Hux)
                Pt = Q + A.T @ Pbar @ A - Hux.T @ np.linalg.solve(Huu, Hux)
                P[t][(m0, m1)] = 0.5 * (Pt + Pt.T)
                K[t][(m0, m1)] = Kt
    return CentralizedSolution(P=P, K=K)


# --- policies ---------------------------------------------------------------


class LinearCommonPolicy:
    """Policy linear in (x0, xhat) commonly and (x1 - xhat) locally.

    Subclasses provide joint_gain(t, m0, ztilde) mapping vec(x0, xhat) to
    vec(u0, qbar(1..kappa1)) when ztilde is empty, or vec(x0, x1) to
    vec(u0, qbar(l)) when ztilde = l, plus innovation_gain(t, m0, m1).
    """

    name = "linear"

    def __init__(self, spec):
        self.spec = spec
        d = spec.dims
        self._n_xi = d.d_x0 + 2 * d.d_x1

    def joint_gain(self, t, m0, ztilde):
        raise NotImplementedError

    def innovation_gain(self, t, m0, m1):
        raise NotImplementedError

    # vector path (used by the simulator)

    def act(self, t, m0, m1, gamma, x0, x1, x_hat1):
        d = self.spec.dims
        if gamma == 1:
            v = self.joint_gain(t, m0, m1) @ np.concatenate([x0, x1])
            return v[:d.d_u0], v[d.d_u0:]
        v = self.joint_gain(t, m0, EMPTY) @ np.concatenate([x0, x_hat1])
        qbar = v[d.d_u0:].reshape(self.spec.modes.kappa1, d.d_u1)
        u1 = qbar[m1] + self.innovation_gain(t, m0, m1) @ (x1 - x_hat1)
        return v[:d.d_u0], u1

    def update_estimate(self, t, m0, m1, gamma_t, gamma_next, x0, x1, x_hat1, x1_next):
        d, m = self.spec.dims, self.spec.modes
        if gamma_next == 1:
            return x1_next.copy()
        if gamma_t == 0:
            v = self.joint_gain(t, m0, EMPTY) @ np.concatenate([x0, x_hat1])
            u0 = v[:d.d_u0]
            qbar = v[d.d_u0:].reshape(m.kappa1, d.d_u1)
            out = np.zeros(d.d_x1)
            for mm1 in range(m.kappa1):
                _, _, D = assemble_system(self.spec, m0, mm1)
                s = np.concatenate([x0, x_hat1, u0, qbar[mm1]])
                out += m.pi_m1[mm1] * (D[d.d_x0:, :] @ s)
            return out
        v = self.joint_gain(t, m0, m1) @ np.concatenate([x0, x1])
        _, _, D = assemble_system(self.spec, m0, m1)
        s = np.concatenate([x0, x1, v[:d.d_u0], v[d.d_u0:]])
        return D[d.d_x0:, :] @ s

    # matrix path (used by the exact evaluator); xi = vec(x0, x1, xhat)

    def _sel(self):
        d = self.spec.dims
        n = self._n_xi
        sx0 = np.zeros((d.d_x0, n))
        sx0[:, :d.d_x0] = np.eye(d.d_x0)
        sx1 = np.zeros((d.d_x1, n))
        sx1[:, d.d_x0:d.d_x0 + d.d_x1] = np.eye(d.d_x1)
        sxh = np.zeros((d.d_x1, n))
        sxh[:, d.d_x0 + d.d_x1:] = np.eye(d.d_x1)
        return sx0, sx1, sxh

    def action_map(self, t, m0, m1, gamma):
        """u = Theta @ xi for the realized (m0, m1, gamma)."""
        d = self.spec.dims
        sx0, sx1, sxh = self._sel()
        if gamma == 1:
            return self.joint_gain(t, m0, m1) @ np.vstack([sx0, sx1])
        v = self.joint_gain(t, m0, EMPTY) @ np.vstack([sx0, sxh])
        theta = np.zeros((d.d_u, self._n_xi))
        theta[:d.d_u0] = v[:d.d_u0]
        theta[d.d_u0:] = v[d.d_u0 + m1 * d.d_u1: d.d_u0 + (m1 + 1) * d.d_u1]
        kt = self.innovation_gain(t, m0, m1)
        theta[d.d_u0:] += kt @ (sx1 - sxh)
        return theta

    def mean_update_map(self, t, m0, m1, gamma):
        """xhat_{t+1} = M @ xi when the next transmission fails."""
        d, m = self.spec.dims, self.spec.modes
        sx0, sx1, sxh = self._sel()
        if gamma == 0:
            v = self.joint_gain(t, m0, EMPTY) @ np.vstack([sx0, sxh])
            out = np.zeros((d.d_x1, self._n_xi))
            for mm1 in range(m.kappa1):
                _, _, D = assemble_system(self.spec, m0, mm1)
                stack = np.vstack(
                    [sx0, sxh, v[:d.d_u0], v[d.d_u0 + mm1 * d.d_u1: d.d_u0 + (mm1 + 1) * d.d_u1]]
                )
                out += m.pi_m1[mm1] * (D[d.d_x0:, :] @ stack)
            return out
        v = self.joint_gain(t, m0, m1) @ np.vstack([sx0, sx1])
        _, _, D = assemble_system(self.spec, m0, m1)
        stack = np.vstack([sx0, sx1, v[:d.d_u0], v[d.d_u0:]])
        return D[d.d_x0:, :] @ stack


class OptimalPolicy(LinearCommonPolicy):
    """The solved decentralized optimum; vector path goes through the
    prescription/estimator operations so their contracts get exercised."""

    name = "optimal"

    def __init__(self, spec, bundle):
        super().__init__(spec)
        self.bundle = bundle

    def joint_gain(self, t, m0, ztilde):
        return self.bundle.gains.K[t][(m0, ztilde)]

    def innovation_gain(self, t, m0, m1):
        return self.bundle.gains.Ktilde[t][(m0, m1)]

    def act(self, t, m0, m1, gamma, x0, x1, x_hat1):
        est = EstimatorState(x_hat1=x_hat1)
        zt = m1 if gamma == 1 else EMPTY
        presc = compute_prescription(self.bundle, self.spec, t, m0, zt, x0, est)
        return presc.u0, local_action(presc, x1, m1, est)

    def update_estimate(self, t, m0, m1, gamma_t, gamma_next, x0, x1, x_hat1, x1_next):
        est = EstimatorState(x_hat1=x_hat1)
        zt = m1 if gamma_t == 1 else EMPTY
        presc = compute_prescription(self.bundle, self.spec, t, m0, zt, x0, est)
        z_next = x1_next if gamma_next == 1 else None
        return estimator_update(
            self.spec, self.bundle, t, est, x0, m0, zt, presc, z_next
        ).x_hat1


class ZeroPolicy(LinearCommonPolicy):
    name = "zero"

    def joint_gain(self, t, m0, ztilde):
        d, m = self.spec.dims, self.spec.modes
        rows = d.d_u0 + (m.kappa1 * d.d_u1 if ztilde is EMPTY else d.d_u1)
        return np.zeros((rows, d.d_x))

    def innovation_gain(self, t, m0, m1):
        return np.zeros((self.spec.dims.d_u1, self.spec.dims.d_x1))


class CertaintyEquivalentPolicy(LinearCommonPolicy):
    """Deliberately suboptimal heuristic: plug the common estimate into the
    centralized gains. The global controller averages the gain over the
    unobserved local mode; the local controller uses the true mode and adds
    the centralized local-state feedback on the innovation."""

    name = "ce"

    def __init__(self, spec, centralized):
        super().__init__(spec)
        self.centralized = centralized

    def joint_gain(self, t, m0, ztilde):
        d, m = self.spec.dims, self.spec.modes
        if ztilde is not EMPTY:
            return self.centralized.K[t][(m0, ztilde)]
        out = np.zeros((d.d_u0 + m.kappa1 * d.d_u1, d.d_x))
        Kbar0 = np.zeros((d.d_u0, d.d_x))
        for m1 in range(m.kappa1):
            Kc = self.centralized.K[t][(m0, m1)]
            Kbar0 += m.pi_m1[m1] * Kc[:d.d_u0]
            out[d.d_u0 + m1 * d.d_u1: d.d_u0 + (m1 + 1) * d.d_u1] = Kc[d.d_u0:]
        out[:d.d_u0] = Kbar0
        return out

    def innovation_gain(self, t, m0, m1):
        d = self.spec.dims
        return self.centralized.K[t][(m0, m1)][d.d_u0:, d.d_x0:]


class CentralizedPolicy:
    """Full-information reference: both actions from the true joint state.

    Not implementable in the decentralized information structure; its
    estimate coordinate simply tracks the true local state.
    """

    name = "centralized"

    def __init__(self, spec, centralized):
        self.spec = spec
        self.centralized = centralized
        d = spec.dims
        self._n_xi = d.d_x0 + 2 * d.d_x1

    def act(self, t, m0, m1, gamma, x0, x1, x_hat1):
        d = self.spec.dims
        u = self.centralized.K[t][(m0, m1)] @ np.concatenate([x0, x1])
        return u[:d.d_u0], u[d.d_u0:]

    def update_estimate(self, t, m0, m1, gamma_t, gamma_next, x0, x1, x_hat1, x1_next):
        return x1_next.copy()

    def action_map(self, t, m0, m1, gamma):
        d = self.spec.dims
        n = self._n_xi
        sel = np.zeros((d.d_x, n))
        sel[:d.d_x0, :d.d_x0] = np.eye(d.d_x0)
        sel[d.d_x0:, d.d_x0:d.d_x0 + d.d_x1] = np.eye(d.d_x1)
        return self.centralized.K[t][(m0, m1)] @ sel

    def mean_update_map(self, t, m0, m1, gamma):
        # Signals the evaluator that xhat copies x1 (noise included).
        return None


def make_policy(kind, spec, bundle=None, centralized=None):
    if kind == "optimal":
        if bundle is None:
            raise ValueError("optimal policy needs a solved bundle")
        return OptimalPolicy(spec, bundle)
    if kind == "zero":
        return ZeroPolicy(spec)
    if kind in ("ce", "centralized"):
        if centralized is None:
            centralized = centralized_solve(spec)
        if kind == "ce":
            return CertaintyEquivalentPolicy(spec, centralized)
        return CentralizedPolicy(spec, centralized)
    raise ValueError(f"unknown policy kind {kind!r}")
