"""Ridge, closed-form physics-informed ridge, and soft-penalty gradient fits."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ShapeError, SingularSystemError


@dataclass
class RegressionProblem:
    """Design matrix, targets and penalty weights.

    ``val`` / ``test`` are optional ``(Phi, y)`` pairs used for reporting and,
    in gradient fits, for early stopping.
    """

    Phi: np.ndarray
    y: np.ndarray
    xi: float = 0.0
    nu: float = 0.0
    val: tuple | None = None
    test: tuple | None = None

    def __post_init__(self):
        self.Phi = np.atleast_2d(np.asarray(self.Phi, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.Phi.shape[0] != len(self.y):
            raise ShapeError(f"Phi has {self.Phi.shape[0]} rows but y has {len(self.y)} entries")
        if len(self.y) < 1:
            raise ShapeError("need at least one sample")
        if self.xi < 0 or self.nu < 0:
            raise ValueError("xi and nu must be non-negative")

    @property
    def n(self):
        return len(self.y)

    @property
    def d(self):
        return self.Phi.shape[1]


@dataclass
class OptimizerConfig:
    lr: float = 1e-2
    epochs: int = 2000
    decay: float = 0.999
    patience: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class FitReport:
    w: np.ndarray
    mse_train: float
    mse_val: float = math.nan
    mse_test: float = math.nan
    residual_norm: float = math.nan
    epochs_run: int = 0
    wall_ms: int = 0
    seed: object = None
    xi: float = math.nan
    nu: float = math.nan
    method: str = ""
    diverged: bool = False
    extra: dict = field(default_factory=dict)


def mse(a, b):
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    if a.size == 0:
        raise ShapeError("mse of empty vectors")
    return float(np.mean((a - b) ** 2))


def predict(basis, w, xs):
    w = np.asarray(w, dtype=float)
    if w.shape != (basis.size,):
        raise ShapeError(f"weights must have length {basis.size}")
    return basis.design(xs) @ w


def _split_mse(pair, w):
    if pair is None:
        return math.nan
    Phi, y = pair
    return mse(np.asarray(Phi) @ w, y)


def _spd_solve(A, b):
    """Cholesky (dense) or sparse LU, retrying once with ``1e-12 * trace`` jitter."""
    if sp.issparse(A):
        A = A.tocsc()
        jitter = 1e-12 * A.diagonal().sum() / A.shape[0]
        for shift in (0.0, jitter):
            M = A if shift == 0 else (A + shift * sp.identity(A.shape[0], format="csc"))
            try:
                x = spla.splu(M).solve(b)
            except RuntimeError:
                continue
            if np.all(np.isfinite(x)):
                return x
        raise SingularSystemError("sparse system matrix is singular")
    jitter = 1e-12 * np.trace(A) / A.shape[0]
    for shift in (0.0, jitter):
        M = A if shift == 0 else A + shift * np.eye(A.shape[0])
        try:
            return la.cho_solve(la.cho_factor(M, check_finite=True), b)
        except la.LinAlgError:
            continue
    raise SingularSystemError("system matrix is not positive definite")


def _report(prob, w, method, t0, **kw):
    return FitReport(
        w=w,
        mse_train=mse(prob.Phi @ w, prob.y),
        mse_val=_split_mse(prob.val, w),
        mse_test=_split_mse(prob.test, w),
        wall_ms=int(round((time.perf_counter() - t0) * 1000)),
        xi=prob.xi,
        nu=prob.nu,
        method=method,
        **kw,
    )


def _full_rank(Phi):
    from .variety import numeric_rank

    return numeric_rank(Phi, 1e-12) == Phi.shape[1]


def fit_ridge(prob: RegressionProblem) -> FitReport:
    """``w = (Phi^T Phi + n xi I)^{-1} Phi^T y``.

    With fewer samples than features the same vector is computed as
    ``Phi^T (Phi Phi^T + n xi I)^{-1} y``, an ``n x n`` solve.
    """
    t0 = time.perf_counter()
    if prob.xi == 0 and not _full_rank(prob.Phi):
        raise SingularSystemError("xi = 0 with a rank-deficient design matrix")
    if prob.xi > 0 and prob.n < prob.d:
        A = prob.Phi @ prob.Phi.T + prob.n * prob.xi * np.eye(prob.n)
        w = prob.Phi.T @ _spd_solve(A, prob.y)
        return _report(prob, w, "rr", t0)
    A = prob.Phi.T @ prob.Phi + prob.n * prob.xi * np.eye(prob.d)
    w = _spd_solve(A, prob.Phi.T @ prob.y)
    return _report(prob, w, "rr", t0)


def _gram_penalty(D, T):
    if sp.issparse(D):
        T = sp.csr_matrix(T) if not sp.issparse(T) else T
        return (D.T @ T @ D).tocsc()
    T = T.toarray() if sp.issparse(T) else np.asarray(T, dtype=float)
    D = np.asarray(D, dtype=float)
    return D.T @ T @ D


def pilr_matrix(prob, penalty):
    """``Phi^T Phi + n (xi I + nu P)`` for a precomputed ``P = D^T T D``."""
    n, d = prob.n, prob.d
    if sp.issparse(penalty):
        Phi = sp.csr_matrix(prob.Phi)
        return (Phi.T @ Phi + n * prob.xi * sp.identity(d) + n * prob.nu * penalty).tocsc()
    return prob.Phi.T @ prob.Phi + n * (prob.xi * np.eye(d) + prob.nu * penalty)


def fit_pilr_linear(prob: RegressionProblem, D, T, penalty=None) -> FitReport:
    """``w = (Phi^T Phi + n (xi I + nu D^T T D))^{-1} Phi^T y``.

    ``penalty`` may pass a cached ``D^T T D`` when sweeping hyperparameters.
    """
    t0 = time.perf_counter()
    K = D.shape[0]
    if D.shape[1] != prob.d:
        raise ShapeError(f"D has {D.shape[1]} columns, basis has {prob.d}")
    if T.shape != (K, K):
        raise ShapeError(f"T must be {K}x{K}, got {T.shape}")
    if penalty is None:
        penalty = _gram_penalty(D, T)
    A = pilr_matrix(prob, penalty)
    if prob.xi == 0 and not sp.issparse(A):
        from .variety import numeric_rank

        if numeric_rank(A, 1e-12) < prob.d:
            raise SingularSystemError("xi = 0 and the penalised normal matrix is singular")
    w = _spd_solve(A, prob.Phi.T @ prob.y)
    rep = _report(prob, w, "pilr", t0)
    rep.residual_norm = float(np.linalg.norm(D @ w))
    return rep


def soft_loss(prob, cs, w):
    """``(1/n)|y - Phi w|^2 + (nu/K)|p(w)|^2 + xi |w|^2`` and its gradient."""
    w = np.asarray(w, dtype=float)
    r = prob.Phi @ w - prob.y
    sq, jtp = cs.sq_norm_grad(w)
    K = max(cs.K, 1)
    loss = r @ r / prob.n + prob.nu * sq / K + prob.xi * w @ w
    grad = 2 * prob.Phi.T @ r / prob.n + 2 * prob.nu * jtp / K + 2 * prob.xi * w
    return float(loss), grad


@np.errstate(over="ignore", invalid="ignore")  # divergence is detected from non-finite values
def adam_batch(Phi, y, cs, xis, nus, opt, val=None, w0=None):
    """Minimise the soft loss for every ``(xi, nu)`` column simultaneously.

    Columns are independent: each keeps its own Adam moments, best-validation
    iterate and patience counter, and stops on its own.  Returns
    ``(best_w, best_val, epochs, diverged)`` with one entry per column.
    """
    Phi = np.asarray(Phi, dtype=float)
    y = np.asarray(y, dtype=float)
    xis = np.asarray(xis, dtype=float)
    nus = np.asarray(nus, dtype=float)
    n, d = Phi.shape
    B = len(xis)
    K = max(cs.K, 1)
    W = np.zeros((d, B)) if w0 is None else np.array(w0, dtype=float).reshape(d, B)
    m = np.zeros_like(W)
    v = np.zeros_like(W)
    Yc = y[:, None]
    if val is not None:
        Phi_v, y_v = np.asarray(val[0], dtype=float), np.asarray(val[1], dtype=float)[:, None]

    def score(Wc, cols):
        if val is not None:
            return np.mean((Phi_v @ Wc - y_v) ** 2, axis=0)
        sq, _ = cs.sq_norm_grad(Wc)
        r = Phi @ Wc - Yc
        return np.sum(r**2, axis=0) / n + nus[cols] * sq / K + xis[cols] * np.sum(Wc**2, axis=0)

    best = score(W, np.arange(B))
    best_W = W.copy()
    stale = np.zeros(B, dtype=int)
    epochs = np.zeros(B, dtype=int)
    active = np.ones(B, dtype=bool)
    diverged = np.zeros(B, dtype=bool)
    b1, b2 = opt.beta1, opt.beta2
    for epoch in range(1, opt.epochs + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Wa = W[:, idx]
        r = Phi @ Wa - Yc
        _, jtp = cs.sq_norm_grad(Wa)
        g = 2 * Phi.T @ r / n + 2 * nus[idx] * jtp / K + 2 * xis[idx] * Wa
        m[:, idx] = b1 * m[:, idx] + (1 - b1) * g
        v[:, idx] = b2 * v[:, idx] + (1 - b2) * g**2
        mhat = m[:, idx] / (1 - b1**epoch)
        vhat = v[:, idx] / (1 - b2**epoch)
        lr = opt.lr * opt.decay ** (epoch - 1)
        Wa = Wa - lr * mhat / (np.sqrt(vhat) + opt.eps)
        W[:, idx] = Wa
        epochs[idx] = epoch
        s = score(Wa, idx)
        bad = ~np.isfinite(s) | ~np.all(np.isfinite(Wa), axis=0)
        if bad.any():
            diverged[idx[bad]] = True
            active[idx[bad]] = False
        better = (s < best[idx]) & ~bad
        upd = idx[better]
        best[upd] = s[better]
        best_W[:, upd] = Wa[:, better]
        stale[upd] = 0
        worse = idx[~better & ~bad]
        stale[worse] += 1
        active[worse[stale[worse] >= opt.patience]] = False
    return best_W, best, epochs, diverged


def fit_pilr_soft(prob: RegressionProblem, cs, opt: OptimizerConfig | None = None) -> FitReport:
    """Adam on the soft-penalised loss; returns the best-validation iterate.

    A run that produces a non-finite loss is reported with ``diverged=True``
    rather than raised.
    """
    opt = opt or OptimizerConfig()
    if cs.d != prob.d:
        raise ShapeError(f"constraint system has d={cs.d}, basis has {prob.d}")
    t0 = time.perf_counter()
    W, _, epochs, diverged = adam_batch(prob.Phi, prob.y, cs, [prob.xi], [prob.nu], opt, val=prob.val)
    w = W[:, 0]
    with np.errstate(over="ignore", invalid="ignore"):
        rep = _report(prob, w, "pilr", t0, epochs_run=int(epochs[0]), seed=opt.seed, diverged=bool(diverged[0]))
        rep.residual_norm = float(np.linalg.norm(cs.residual(w)))
    return rep
