"""Ground-truth solutions, noisy datasets and the best-in-span error."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import GridBasis1D, GridBasis2D
from .errors import BlowUpError, UnstableSchemeError
from .operators import ContinuousDiffusion, EulerBernoulli, FdmDiffusion, HarmonicOscillator

log = logging.getLogger(__name__)

_BLOWUP = 1e100


@dataclass
class GroundTruth:
    """A reference solution: an analytic callable or a simulated grid."""

    tag: str
    seed: object
    ic: dict
    domain: tuple
    func: object = None
    grid: np.ndarray | None = None
    steps: tuple = ()
    nodes: np.ndarray | None = field(default=None, repr=False)

    @property
    def discrete(self):
        return self.grid is not None

    @property
    def ndim(self):
        return len(self.domain)

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        if not self.discrete:
            return self.func(pts)
        if self.grid.ndim == 1:
            (h,) = self.steps
            idx = np.floor(pts.reshape(-1) / h + 1e-9).astype(int)
            return self.grid[np.clip(idx, 0, len(self.grid) - 1)]
        h_t, h_x = self.steps
        pts = pts.reshape(-1, 2)
        n_rows, n_x = self.grid.shape
        j = np.clip(np.floor((pts[:, 0] - self.domain[0][0]) / h_x + 1e-9).astype(int), 0, n_x - 1)
        tau = np.clip(np.floor(pts[:, 1] / h_t + 1e-9).astype(int), 0, n_rows - 1)
        return self.grid[tau, j]


def _fourier_ic(rng, j_max):
    coeffs = rng.normal(1.0, 1.0, size=(j_max + 1, 2))
    return coeffs[:, 0], coeffs[:, 1]


def _fourier_field(A, B, xi, c):
    w = np.arange(len(A)) * np.pi / xi

    def u(points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        x, t = pts[:, :1], pts[:, 1:]
        modes = A * np.cos(w * x) + B * np.sin(w * x)
        return np.sum(modes * np.exp(-c * w**2 * t), axis=1)

    return u


def generate_solution(op, seed, *, T=None, xi=None, j_max=1, ic=None) -> GroundTruth:
    """Reference solution for ``op`` with initial data drawn from ``seed``.

    Oscillator: ``[y0, v0] ~ N(1, I)``; diffusion (both kinds): Fourier
    coefficients ``[A_j, B_j] ~ N(1, I)`` for ``j <= j_max``; Bernoulli:
    ``y0 ~ N(0, 1)``.  ``ic`` overrides the draw.
    """
    rng = np.random.default_rng(seed)
    if isinstance(op, HarmonicOscillator):
        T = 2 * math.pi if T is None else T
        y0, v0 = (ic["y0"], ic["v0"]) if ic else rng.normal(1.0, 1.0, size=2)
        om = op.omega

        def y(t):
            t = np.asarray(t, dtype=float).reshape(-1)
            return y0 * np.cos(om * t) + v0 / om * np.sin(om * t)

        return GroundTruth("oscillator", seed, {"y0": float(y0), "v0": float(v0)}, ((0.0, T),), func=y)

    if isinstance(op, ContinuousDiffusion):
        T = 2 * math.pi if T is None else T
        xi = math.pi if xi is None else xi
        A, B = (np.asarray(ic["A"], float), np.asarray(ic["B"], float)) if ic else _fourier_ic(rng, j_max)
        return GroundTruth(
            "diffusion", seed, {"A": A.tolist(), "B": B.tolist()}, ((-xi, xi), (0.0, T)),
            func=_fourier_field(A, B, xi, op.c),
        )

    if isinstance(op, EulerBernoulli):
        T = 1.0 if T is None else T
        n_t = int(round(T / op.h))
        y0 = ic["y0"] if ic else rng.normal()
        y = np.empty(n_t + 1)
        y[0] = y0
        with np.errstate(over="ignore", invalid="ignore"):
            for tau in range(n_t):
                cur = y[tau]
                nonlin = op.Q if op.rho == 0 else op.Q * cur**op.rho
                y[tau + 1] = cur - op.h * (op.P * cur - nonlin)
                if not np.isfinite(y[tau + 1]) or abs(y[tau + 1]) > _BLOWUP:
                    raise BlowUpError(f"Euler rollout blew up at step {tau + 1}", tau + 1)
        nodes = np.arange(n_t) * op.h
        return GroundTruth("bernoulli", seed, {"y0": float(y0)}, ((0.0, T),), grid=y, steps=(op.h,), nodes=nodes)

    if isinstance(op, FdmDiffusion):
        T = 1.0 if T is None else T
        xi = 1.0 if xi is None else xi
        ratio = op.coef.sup * op.h_t / op.h_x**2
        if ratio > 0.5:
            raise UnstableSchemeError(f"explicit scheme unstable: c*h_t/h_x^2 = {ratio:.4g} > 1/2")
        n_t = int(round(T / op.h_t))
        n_x = int(round(2 * xi / op.h_x))
        x = -xi + np.arange(n_x) * op.h_x
        A, B = (np.asarray(ic["A"], float), np.asarray(ic["B"], float)) if ic else _fourier_ic(rng, j_max)
        w = np.arange(len(A)) * np.pi / xi
        u = np.empty((n_t + 1, n_x))
        u[0] = np.sum(A * np.cos(np.outer(x, w)) + B * np.sin(np.outer(x, w)), axis=1)
        with np.errstate(over="ignore", invalid="ignore"):
            for tau in range(n_t):
                cur = u[tau]
                lap = (np.roll(cur, -1) - 2 * cur + np.roll(cur, 1)) / op.h_x**2
                u[tau + 1] = cur + op.h_t * op.coef(cur) * lap
                if not np.all(np.isfinite(u[tau + 1])) or np.abs(u[tau + 1]).max() > _BLOWUP:
                    raise BlowUpError(f"FDM rollout blew up at step {tau + 1}", tau + 1)
        tau_i, j_i = np.divmod(np.arange((n_t + 1) * n_x), n_x)
        nodes = np.column_stack([x[j_i], tau_i * op.h_t])
        return GroundTruth(
            "fdm_diffusion", seed, {"A": A.tolist(), "B": B.tolist()}, ((-xi, xi), (0.0, T)),
            grid=u, steps=(op.h_t, op.h_x), nodes=nodes,
        )
    raise TypeError(f"no simulator for {type(op).__name__}")


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    noise_var: float
    seed: object

    @property
    def counts(self):
        return len(self.y_train), len(self.y_val), len(self.y_test)


def _draw_locations(gt, count, rng, distinct):
    if gt.discrete:
        pool = gt.nodes
        idx = rng.choice(len(pool), size=count, replace=not distinct or count > len(pool))
        return pool[idx]
    cols = [rng.uniform(lo, hi, size=count) for lo, hi in gt.domain]
    return cols[0] if len(cols) == 1 else np.column_stack(cols)


def make_dataset(gt, n, noise_var, split=(0.6, 0.2, 0.2), seed=0, n_test=None) -> Dataset:
    """Noisy train/validation sets and a noiseless test set.

    ``n`` locations are drawn (grid nodes without replacement for simulated
    solutions, uniform over the box otherwise) and split by shuffled index.
    Test targets are exact; ``n_test`` replaces the test share with that many
    fresh locations.
    """
    if n < 3:
        raise ValueError("n must be >= 3")
    if len(split) != 3 or abs(sum(split) - 1.0) > 1e-9 or min(split) < 0:
        raise ValueError(f"split fractions must be three non-negatives summing to 1, got {split}")
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    n_rest = n - n_train - n_val
    if n_train < 1 or n_val < 1 or (n_test is None and n_rest < 1):
        raise ValueError(f"n={n} is too small for split {split}")
    rng = np.random.default_rng(seed)
    locs = _draw_locations(gt, n_train + n_val + (n_rest if n_test is None else 0), rng, distinct=True)
    order = rng.permutation(len(locs))
    locs = locs[order]
    noise = rng.normal(0.0, math.sqrt(noise_var), size=n_train + n_val) if noise_var > 0 else np.zeros(n_train + n_val)
    x_tr, x_va = locs[:n_train], locs[n_train:n_train + n_val]
    x_te = locs[n_train + n_val:] if n_test is None else _draw_locations(gt, n_test, rng, distinct=False)
    y_tr = gt(x_tr) + noise[:n_train]
    y_va = gt(x_va) + noise[n_train:]
    return Dataset(x_tr, y_tr, x_va, y_va, x_te, gt(x_te), float(noise_var), seed)


def _dense_grid(domain, resolution):
    if len(domain) == 1:
        (lo, hi), = domain
        return lo + (np.arange(resolution) + 0.5) * (hi - lo) / resolution
    per_axis = int(math.ceil(math.sqrt(resolution)))
    axes = [lo + (np.arange(per_axis) + 0.5) * (hi - lo) / per_axis for lo, hi in domain]
    X, Tt = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([X.ravel(), Tt.ravel()])


def approximation_error(basis, gt, resolution=4096):
    """MSE of the least-squares projection of the truth onto the basis span.

    Continuous truths use a midpoint grid of ``resolution`` points (per box);
    simulated truths use their own grid nodes.
    """
    if gt.discrete:
        pts = gt.nodes
    else:
        if resolution < 1000:
            raise ValueError("approximation error needs at least 1000 evaluation points")
        pts = _dense_grid(gt.domain, resolution)
    Phi = basis.design(pts)
    target = gt(pts)
    coef, _, rank, _ = np.linalg.lstsq(Phi, target, rcond=None)
    if rank < Phi.shape[1]:
        log.info("rank-deficient projection (%d < %d); using the pseudo-inverse", rank, Phi.shape[1])
    resid = target - Phi @ coef
    return float(np.mean(resid**2))


def project(basis, gt, resolution=4096):
    """Least-squares coefficients of the truth in the basis span."""
    if isinstance(basis, (GridBasis1D, GridBasis2D)) and gt.discrete:
        return np.asarray(gt(basis.nodes), dtype=float)
    pts = _dense_grid(gt.domain, resolution)
    coef, *_ = np.linalg.lstsq(basis.design(pts), gt(pts), rcond=None)
    return coef


def write_dataset_csv(ds, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        ndim = 1 if np.asarray(ds.x_train).ndim == 1 else np.asarray(ds.x_train).shape[1]
        coords = ["t"] if ndim == 1 else ["x", "t"]
        writer.writerow(coords + ["y", "split"])
        for name, xs, ys in (("train", ds.x_train, ds.y_train), ("val", ds.x_val, ds.y_val), ("test", ds.x_test, ds.y_test)):
            for x, y in zip(np.asarray(xs), ys):
                writer.writerow([repr(float(v)) for v in np.atleast_1d(x)] + [repr(float(y)), name])


def write_grid_csv(gt, path):
    """Simulated grid with a one-line metadata header."""
    if not gt.discrete:
        raise ValueError("only simulated ground truths have a grid")
    meta = {"equation": gt.tag, "seed": gt.seed, "shape": "x".join(map(str, gt.grid.shape)),
            "steps": ";".join(repr(s) for s in gt.steps)}
    with open(path, "w", newline="") as fh:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        writer = csv.writer(fh)
        for row in np.atleast_2d(gt.grid):
            writer.writerow([repr(float(v)) for v in row])
