"""Small dense-matrix utilities the backward recursions are written in.

Everything here is a pure function on numpy arrays: quadratic forms, block
partitions, Schur complements, mode-selector matrices, and definiteness
checks with scale-free tolerances.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DefinitenessError, DimensionError, SingularBlockError

SYM_TOL = 1e-10
DEF_TOL = 1e-10


@dataclass(frozen=True)
class BlockPartition:
    """View of a square matrix as [[G11, G12], [G21, G22]] split after n_top."""

    n_top: int

    def check(self, n):
        if not 0 < self.n_top < n:
            raise DimensionError(
                f"block split {self.n_top} invalid for {n}x{n} matrix"
            )


class Blocks(NamedTuple):
    xx: np.ndarray
    xu: np.ndarray
    ux: np.ndarray
    uu: np.ndarray


def sym(M):
    """Symmetrize; used after every recursion step to stop drift."""
    return 0.5 * (M + M.T)


def _scale(M):
    return max(1.0, float(np.linalg.norm(M, 2))) if M.size else 1.0


def check_symmetric(M, name="matrix", tol=SYM_TOL):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"{name} is not square: shape {M.shape}")
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > tol * _scale(M):
        raise DefinitenessError(f"{name} is not symmetric (asymmetry {asym:.3e})")
    return sym(M)


def min_eig(M):
    if M.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(sym(M)).min())


def assert_psd(M, tol=DEF_TOL, name="matrix"):
    M = check_symmetric(M, name)
    lo = min_eig(M)
    if lo < -tol * _scale(M):
        raise DefinitenessError(f"{name} is not PSD", min_eig=lo)


def assert_pd(M, tol=DEF_TOL, name="matrix"):
    M = check_symmetric(M, name)
    lo = min_eig(M)
    if lo <= tol * _scale(M):
        raise DefinitenessError(f"{name} is not PD", min_eig=lo)


def qf(G, x):
    """Quadratic form x'Gx."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if G.shape != (x.size, x.size):
        raise DimensionError(f"qf: G {G.shape} does not match vector of size {x.size}")
    return float(x @ G @ x)


def partition(H, n_x):
    """Split a square matrix into (XX, XU, UX, UU) blocks after row/col n_x."""
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionError(f"partition: matrix not square, shape {H.shape}")
    if not 0 < n_x < H.shape[0]:
        raise DimensionError(f"partition: split {n_x} invalid for size {H.shape[0]}")
    return Blocks(H[:n_x, :n_x], H[:n_x, n_x:], H[n_x:, :n_x], H[n_x:, n_x:])


def schur_complement(G, part):
    """SC(G, G22) = G11 - G12 G22^-1 G21 via a Cholesky solve of G22.

    Raises SingularBlockError when G22 fails the PD test; this is the
    numerical signature of the R-PD assumption breaking down.
    """
    if isinstance(part, BlockPartition):
        part.check(G.shape[0])
        n_top = part.n_top
    else:
        n_top = int(part)
    g11, g12, g21, g22 = partition(G, n_top)
    lo = min_eig(g22)
    if lo <= DEF_TOL * _scale(G):
        raise SingularBlockError(
            f"trailing block is not PD (min eigenvalue {lo:.3e})"
        )
    sol = np.linalg.solve(sym(g22), g21)
    return sym(g11 - g12 @ sol)


def solve_pd(G22, rhs, context=""):
    """Solve G22 x = rhs with the same PD guard as schur_complement."""
    lo = min_eig(G22)
    if lo <= DEF_TOL * _scale(G22):
        raise SingularBlockError(
            f"coefficient block is not PD{context} (min eigenvalue {lo:.3e})"
        )
    return np.linalg.solve(sym(G22), rhs)


def build_L(dims, kappa1, m1):
    """Selector picking vec(x, u0, qbar(m1)) out of vec(x, u0, qbar(1..kappa1)).

    `m1` is a 0-based local-mode index. Rows are orthonormal: L @ L.T = I.
    """
    if not 0 <= m1 < kappa1:
        raise IndexError(f"local mode {m1} out of range for kappa1={kappa1}")
    rows = dims.d_x + dims.d_u0 + dims.d_u1
    cols = dims.d_x + dims.d_u0 + kappa1 * dims.d_u1
    L = np.zeros((rows, cols))
    head = dims.d_x + dims.d_u0
    L[:head, :head] = np.eye(head)
    start = head + m1 * dims.d_u1
    L[head:, start:start + dims.d_u1] = np.eye(dims.d_u1)
    return L
