"""Dimension of the constraint variety and complexity diagnostics."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import uniform_points
from .datagen import generate_solution, project
from .errors import ProjectionError
from .residuals import strong_check_system

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
_DENSE_LIMIT = 1500


@dataclass
class DimReport:
    d: int
    d_V: int
    method: str  # "rank-nullity" or "sampled"
    ranks: list = field(default_factory=list)
    tol: float = DEFAULT_TOL
    N: int = 0


def numeric_rank(A, rel_tol=DEFAULT_TOL):
    """Number of singular values above ``rel_tol`` times the largest.

    Large sparse matrices go through the Gram matrix of the short side: its
    largest eigenvalue gives sigma_max and shift-invert Lanczos at zero counts
    the small ones.  An exactly singular Gram falls back to a dense SVD.
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    if sp.issparse(A):
        if not np.all(np.isfinite(A.data)):
            raise ValueError("matrix has non-finite entries")
        if min(A.shape) == 0 or A.nnz == 0:
            return 0
        if min(A.shape) > _DENSE_LIMIT:
            rank = _sparse_rank(A.tocsr(), rel_tol)
            if rank is not None:
                return rank
        A = A.toarray()
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        A = np.atleast_2d(A)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    if min(A.shape) == 0:
        return 0
    s = la.svdvals(A)
    if s[0] == 0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def _sparse_rank(A, rel_tol):
    if A.shape[0] > A.shape[1]:
        A = A.T.tocsr()
    m = A.shape[0]
    G = (A @ A.T).tocsc()
    v0 = np.ones(m)
    lam_max = spla.eigsh(G, k=1, which="LA", v0=v0, return_eigenvectors=False)[0]
    if lam_max <= 0:
        return 0
    thresh = (rel_tol**2) * lam_max
    try:
        lu = spla.splu(G)
    except RuntimeError:
        log.info("exactly singular Gram; falling back to dense SVD")
        return None
    op = spla.LinearOperator(G.shape, matvec=lu.solve, dtype=float)
    k = min(16, m - 1)
    while True:
        vals = spla.eigsh(G, k=k, sigma=0.0, which="LM", OPinv=op, v0=v0, return_eigenvectors=False)
        small = int(np.sum(vals <= thresh))
        if small < k or k >= m - 1:
            return m - small
        k = min(2 * k, m - 1)


def dim_linear(D, rel_tol=DEFAULT_TOL) -> DimReport:
    """``d_V = d - rank(D)``."""
    d = D.shape[1]
    rank = numeric_rank(D, rel_tol) if D.shape[0] else 0
    return DimReport(d, d - rank, "rank-nullity", [rank], rel_tol)


def sample_variety_points(op, basis, N=10, seed=0, *, T=None, xi=None, j_max=1, check_points=512):
    """Coefficients of ``N`` simulated solutions projected onto the basis.

    Each projection must satisfy the strong residual to ``1e-6 (1 + |w|)``;
    otherwise the basis cannot represent the solutions and
    :class:`ProjectionError` is raised.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    children = np.random.SeedSequence(seed).spawn(N)
    if op.discrete:
        check = strong_check_system(op, basis)
    else:
        check = strong_check_system(op, basis, uniform_points(basis, check_points, np.random.default_rng(seed)))
    out = []
    for child in children:
        gt = generate_solution(op, np.random.default_rng(child), T=T, xi=xi, j_max=j_max)
        w = project(basis, gt)
        r = check.residual(w)
        bound = 1e-6 * (1.0 + np.linalg.norm(w))
        if r.size and np.max(np.abs(r)) > bound:
            raise ProjectionError(
                f"projected solution violates the residual: max |r| = {np.max(np.abs(r)):.3g} > {bound:.3g}"
            )
        out.append(w)
    return out


def dim_sampled(cs, points, rel_tol=DEFAULT_TOL) -> DimReport:
    """Maximum tangent-space dimension ``d - rank J(w*)`` over sampled points."""
    if len(points) == 0:
        raise ValueError("dim_sampled needs at least one sample point")
    ranks = [numeric_rank(cs.jacobian(w), rel_tol) if cs.K else 0 for w in points]
    return DimReport(cs.d, cs.d - min(ranks), "sampled", ranks, rel_tol, len(points))


def effective_dim_bound(D, T, xi, nu, rel_tol=DEFAULT_TOL):
    """``d_V / (1 + xi) + sum_{alpha_j > 0} 1 / (1 + xi + nu alpha_j)``.

    ``alpha_j`` are the eigenvalues of ``D^T T D``; those at or below
    ``rel_tol`` times the largest count towards ``d_V``.
    """
    D = D.toarray() if sp.issparse(D) else np.asarray(D, dtype=float)
    T = T.toarray() if sp.issparse(T) else np.asarray(T, dtype=float)
    d = D.shape[1]
    if D.shape[0] == 0:
        return d / (1.0 + xi)
    S = D.T @ T @ D
    alpha = la.eigvalsh(0.5 * (S + S.T))
    top = alpha.max() if alpha.size else 0.0
    positive = alpha > rel_tol * top if top > 0 else np.zeros_like(alpha, dtype=bool)
    d_V = int(d - positive.sum())
    shift = nu * alpha[positive]
    # terms with no penalty share the d_V denominator; one division keeps nu = 0 exact
    flat = d_V + int(np.sum(shift == 0))
    return flat / (1.0 + xi) + float(np.sum(1.0 / (1.0 + xi + shift[shift != 0])))


def beta_upper_bound(rho, d):
    """``rho (2 rho - 1)^(d + 1)`` in exact integer arithmetic."""
    rho, d = int(rho), int(d)
    if rho < 1 or d < 1:
        raise ValueError("rho and d must be >= 1")
    return rho * (2 * rho - 1) ** (d + 1)


DIM_COLUMNS = ["experiment", "method", "d", "d_V", "N", "tol"]


def write_dim_csv(rows, path):
    """``rows`` is an iterable of ``(experiment, DimReport)``; ``path`` may be an open file."""
    if hasattr(path, "write"):
        _dim_rows(rows, path)
        return
    with open(path, "w", newline="") as fh:
        _dim_rows(rows, fh)


def _dim_rows(rows, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(DIM_COLUMNS)
    for name, rep in rows:
        writer.writerow([name, rep.method, rep.d, rep.d_V, rep.N, repr(rep.tol)])
