"""Basis families, trial functions and measures.

Coordinates follow one convention throughout: 1-D families take a flat array
of times, 2-D families take an ``(N, 2)`` array of ``(x, t)`` rows.  Derivative
orders are tuples with one entry per axis in the same order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import DomainError, UnsupportedOrderError

_DOMAIN_SLACK = 1e-9
_GRID_EPS = 1e-9


def _check_grid(extent, step, name):
    if step <= 0:
        raise DomainError(f"{name} step must be positive, got {step}")
    count = extent / step
    n = int(round(count))
    if n < 1 or abs(count - n) > 1e-9 * max(1.0, count):
        raise DomainError(f"{name} step {step} does not divide extent {extent}")
    return n


def _as_order(order, ndim):
    if isinstance(order, (int, np.integer)):
        order = (int(order),)
    order = tuple(int(o) for o in order)
    if len(order) != ndim:
        raise UnsupportedOrderError(f"expected a {ndim}-axis multi-index, got {order}")
    if any(o < 0 for o in order) or sum(order) > 2:
        raise UnsupportedOrderError(f"derivative order {order} exceeds total order 2")
    return order


class _Basis:
    """Shared helpers; concrete families are frozen dataclasses below."""

    ndim = 1

    def _points(self, x):
        x = np.asarray(x, dtype=float)
        if self.ndim == 1:
            x = x.reshape(-1)
            lo, hi = self.domain[0]
            bad = (x < lo - _DOMAIN_SLACK) | (x > hi + _DOMAIN_SLACK)
        else:
            x = x.reshape(-1, self.ndim)
            bad = np.zeros(len(x), dtype=bool)
            for axis, (lo, hi) in enumerate(self.domain):
                bad |= (x[:, axis] < lo - _DOMAIN_SLACK) | (x[:, axis] > hi + _DOMAIN_SLACK)
        if not np.all(np.isfinite(x)):
            raise DomainError("non-finite evaluation point")
        if bad.any():
            raise DomainError(f"{int(bad.sum())} point(s) outside domain {self.domain}")
        return x

    def design(self, x):
        """Design matrix: row i is phi(x_i)."""
        return self.jet(x, (0,) * self.ndim)

    @property
    def differentiable(self):
        return True


@dataclass(frozen=True)
class FourierBasis(_Basis):
    """Constant plus cos/sin pairs on ``[0, T]`` with frequencies ``2 pi j / T``.

    With ``omit_fundamental`` the j=1 pair is dropped and the pair at
    ``d_t + 1`` is appended, so the size stays ``2 d_t + 1``.
    """

    d_t: int
    T: float = 2 * math.pi
    omit_fundamental: bool = False
    family = "fourier1d"

    def __post_init__(self):
        if self.T <= 0:
            raise DomainError(f"extent T must be positive, got {self.T}")
        if self.d_t < 1:
            raise DomainError(f"frequency count must be >= 1, got {self.d_t}")

    @property
    def size(self):
        return 2 * self.d_t + 1

    @property
    def domain(self):
        return ((0.0, float(self.T)),)

    @property
    def freq_index(self):
        start = 2 if self.omit_fundamental else 1
        return np.arange(start, start + self.d_t)

    @property
    def freqs(self):
        return 2 * np.pi * self.freq_index / self.T

    def jet(self, x, order=(0,)):
        (k,) = _as_order(order, 1)
        x = self._points(x)
        w = self.freqs
        out = np.empty((len(x), self.size))
        out[:, 0] = 1.0 if k == 0 else 0.0
        # k-th derivative of cos(wx) is w^k cos(wx + k pi/2), same shift for sin
        arg = np.outer(x, w) + k * np.pi / 2
        scale = w**k
        out[:, 1::2] = scale * np.cos(arg)
        out[:, 2::2] = scale * np.sin(arg)
        return out


@dataclass(frozen=True)
class DiffusionBasis(_Basis):
    """Heat-kernel products ``{cos, sin}(w_j x) exp(-c w_j'^2 t)`` plus a constant.

    Domain is ``[-xi, xi] x [0, T]``, ``w_j = j pi / xi``; columns are ordered
    constant first, then by spatial index j, temporal index j', cos before sin.
    """

    d_x: int
    d_t: int
    xi: float = math.pi
    T: float = 2 * math.pi
    c: float = 1.0
    family = "diffusion"
    ndim = 2

    def __post_init__(self):
        if self.xi <= 0 or self.T <= 0:
            raise DomainError("extents xi and T must be positive")
        if self.d_x < 1 or self.d_t < 1:
            raise DomainError("frequency counts must be >= 1")

    @property
    def size(self):
        return 2 * self.d_x * self.d_t + 1

    @property
    def domain(self):
        return ((-float(self.xi), float(self.xi)), (0.0, float(self.T)))

    def _modes(self):
        j = np.repeat(np.arange(1, self.d_x + 1), self.d_t)
        jp = np.tile(np.arange(1, self.d_t + 1), self.d_x)
        return j * np.pi / self.xi, self.c * (jp * np.pi / self.xi) ** 2

    def jet(self, x, order=(0, 0)):
        a, b = _as_order(order, 2)
        pts = self._points(x)
        w, lam = self._modes()
        xs, ts = pts[:, 0], pts[:, 1]
        decay = (-lam) ** b * np.exp(-np.outer(ts, lam))
        arg = np.outer(xs, w) + a * np.pi / 2
        out = np.empty((len(pts), self.size))
        out[:, 0] = 1.0 if a == b == 0 else 0.0
        out[:, 1::2] = w**a * np.cos(arg) * decay
        out[:, 2::2] = w**a * np.sin(arg) * decay
        return out


@dataclass(frozen=True)
class GridBasis1D(_Basis):
    """Indicators of ``[tau h, (tau+1) h)`` on ``[0, T]``; the last cell is closed."""

    T: float
    h: float
    family = "grid1d"

    def __post_init__(self):
        if self.T <= 0:
            raise DomainError(f"extent T must be positive, got {self.T}")
        _check_grid(self.T, self.h, "time")

    @property
    def n_t(self):
        return int(round(self.T / self.h))

    @property
    def size(self):
        return self.n_t

    @property
    def domain(self):
        return ((0.0, float(self.T)),)

    @property
    def differentiable(self):
        return False

    @property
    def nodes(self):
        return np.arange(self.size) * self.h

    def cell_index(self, x):
        x = self._points(x)
        return np.clip(np.floor(x / self.h + _GRID_EPS).astype(int), 0, self.size - 1)

    def jet(self, x, order=(0,)):
        if _as_order(order, 1) != (0,):
            raise UnsupportedOrderError("indicator bases only support order-0 jets")
        idx = self.cell_index(x)
        out = np.zeros((len(idx), self.size))
        out[np.arange(len(idx)), idx] = 1.0
        return out


@dataclass(frozen=True)
class GridBasis2D(_Basis):
    """Space-time cell indicators on ``[-xi, xi] x [0, T]``.

    There are ``n_t + 1`` time rows (the final row holds ``t = T``) and ``n_x``
    periodic spatial columns; flat index is ``tau * n_x + j``.
    """

    T: float
    h_t: float
    xi: float
    h_x: float
    family = "grid2d"
    ndim = 2

    def __post_init__(self):
        if self.T <= 0 or self.xi <= 0:
            raise DomainError("extents xi and T must be positive")
        _check_grid(self.T, self.h_t, "time")
        _check_grid(2 * self.xi, self.h_x, "space")

    @property
    def n_t(self):
        return int(round(self.T / self.h_t))

    @property
    def n_x(self):
        return int(round(2 * self.xi / self.h_x))

    @property
    def size(self):
        return (self.n_t + 1) * self.n_x

    @property
    def domain(self):
        return ((-float(self.xi), float(self.xi)), (0.0, float(self.T)))

    @property
    def differentiable(self):
        return False

    @property
    def nodes(self):
        tau, j = np.divmod(np.arange(self.size), self.n_x)
        return np.column_stack([-self.xi + j * self.h_x, tau * self.h_t])

    def cell_index(self, x):
        pts = self._points(x)
        j = np.floor((pts[:, 0] + self.xi) / self.h_x + _GRID_EPS).astype(int)
        tau = np.floor(pts[:, 1] / self.h_t + _GRID_EPS).astype(int)
        j = np.clip(j, 0, self.n_x - 1)
        tau = np.clip(tau, 0, self.n_t)
        return tau * self.n_x + j

    def jet(self, x, order=(0, 0)):
        if _as_order(order, 2) != (0, 0):
            raise UnsupportedOrderError("indicator bases only support order-0 jets")
        idx = self.cell_index(x)
        out = np.zeros((len(idx), self.size))
        out[np.arange(len(idx)), idx] = 1.0
        return out


BasisSet = Union[FourierBasis, DiffusionBasis, GridBasis1D, GridBasis2D]

_FAMILIES = {
    "fourier1d": FourierBasis,
    "diffusion": DiffusionBasis,
    "diffusiontensor": DiffusionBasis,
    "grid1d": GridBasis1D,
    "gridindicator1d": GridBasis1D,
    "grid2d": GridBasis2D,
    "gridindicator2d": GridBasis2D,
}


def make_basis(family, **params) -> BasisSet:
    """Build a basis family by name (``fourier1d``, ``diffusion``, ``grid1d``, ``grid2d``)."""
    try:
        cls = _FAMILIES[family.lower().replace("_", "").replace("-", "")]
    except KeyError:
        raise ValueError(f"unknown basis family {family!r}") from None
    return cls(**params)


def eval_jet(basis, x, orders) -> np.ndarray:
    """Rows of partial derivatives of every basis function at a single point."""
    x = np.asarray(x, dtype=float)
    if basis.ndim == 1 and x.ndim == 0:
        x = x.reshape(1)
    return np.vstack([basis.jet(x.reshape(1, -1) if basis.ndim > 1 else x, o)[0] for o in orders])


# ---------------------------------------------------------------------------
# trial functions and measures


@dataclass(frozen=True)
class Dirac:
    point: tuple

    def __post_init__(self):
        if not all(math.isfinite(p) for p in self.point):
            raise DomainError(f"Dirac point must be finite, got {self.point}")


@dataclass(frozen=True)
class Lebesgue:
    """Lebesgue measure restricted to an axis-aligned box, with trapezoid nodes."""

    box: tuple
    nodes: tuple

    def __post_init__(self):
        if len(self.box) != len(self.nodes):
            raise ValueError("box and nodes must have one entry per axis")
        for (lo, hi), m in zip(self.box, self.nodes):
            if not hi > lo:
                raise DomainError(f"Lebesgue box {self.box} has zero volume")
            if m < 2:
                raise ValueError("quadrature needs at least 2 nodes per axis")

    @property
    def ndim(self):
        return len(self.box)

    def quadrature(self):
        """Composite trapezoid nodes and weights over the box."""
        axes, weights = [], []
        for (lo, hi), m in zip(self.box, self.nodes):
            pts = np.linspace(lo, hi, m)
            wts = np.full(m, (hi - lo) / (m - 1))
            wts[[0, -1]] *= 0.5
            axes.append(pts)
            weights.append(wts)
        if self.ndim == 1:
            return axes[0], weights[0]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([g.ravel() for g in grids])
        w = weights[0]
        for extra in weights[1:]:
            w = np.outer(w, extra).ravel()
        return pts, w


Measure = Union[Dirac, Lebesgue]


# Trial functions are small callables so trial sets pickle across workers.


@dataclass(frozen=True)
class Constant:
    value: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        n = x.shape[0] if x.ndim else 1
        return np.full(n, self.value)


@dataclass(frozen=True)
class Wave:
    """``cos`` or ``sin`` of ``freq * x[axis]``, optionally gated to ``t in [t0, t1)``."""

    kind: str
    freq: float
    axis: int = 0
    window: tuple | None = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        coord = x if x.ndim == 1 else x[:, self.axis]
        fn = np.cos if self.kind == "cos" else np.sin
        out = fn(self.freq * coord)
        if self.window is not None:
            t = x[:, 1]
            t0, t1 = self.window
            out = out * ((t >= t0) & (t < t1))
        return out


@dataclass(frozen=True)
class CellIndicator:
    basis: object
    cell: int

    def __call__(self, x):
        return (self.basis.cell_index(x) == self.cell).astype(float)


@dataclass(frozen=True)
class Trial:
    psi: Callable
    measure: Measure
    node: int | None = None  # residual node for difference operators


@dataclass(frozen=True)
class TrialSet:
    trials: tuple = field(default_factory=tuple)

    @property
    def K(self):
        return len(self.trials)

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def __getitem__(self, i):
        return self.trials[i]

    def head(self, k):
        """First ``k`` pairs, in order (used for trial-set ablations)."""
        if not 0 <= k <= self.K:
            raise ValueError(f"cannot keep {k} of {self.K} trials")
        return TrialSet(self.trials[:k])


def _dirac_trials(points, K, seed, psi=None, basis=None):
    pool = np.asarray(points, dtype=float)
    if pool.size == 0:
        raise ValueError("empty point pool for Dirac trial sampling")
    if K < 1:
        raise ValueError("K must be >= 1")
    if pool.ndim == 1:
        pool = pool[:, None]
    rng = np.random.default_rng(seed)
    replace = K > len(pool)
    idx = rng.choice(len(pool), size=K, replace=replace)
    psi = psi or Constant(1.0)
    if basis is not None:
        basis._points(pool[idx] if basis.ndim > 1 else pool[idx, 0])
    return TrialSet(tuple(Trial(psi, Dirac(tuple(pool[i]))) for i in idx))


def _weak_ho_trials(K_t, T=2 * math.pi, nodes=4096):
    box = ((0.0, float(T)),)
    meas = Lebesgue(box, (int(nodes),))
    trials = [Trial(Constant(1.0), meas)]
    for k in range(1, K_t + 1):
        w = 2 * math.pi * k / T
        trials.append(Trial(Wave("cos", w), meas))
        trials.append(Trial(Wave("sin", w), meas))
    return TrialSet(tuple(trials))


def _weak_diffusion_trials(K_t, K_x, xi=math.pi, T=2 * math.pi, nodes=(256, 256)):
    if isinstance(nodes, int):
        nodes = (nodes, nodes)
    edges = np.linspace(0.0, T, K_t + 1)
    trials = []
    for k in range(K_t):
        window = (float(edges[k]), float(edges[k + 1]))
        meas = Lebesgue(((-float(xi), float(xi)), window), tuple(int(m) for m in nodes))
        # the final slab is closed so t = T is covered
        gate = (window[0], np.inf) if k == K_t - 1 else window
        for kp in range(1, K_x + 1):
            w = kp * math.pi / xi
            trials.append(Trial(Wave("cos", w, 0, gate), meas))
            trials.append(Trial(Wave("sin", w, 0, gate), meas))
    return TrialSet(tuple(trials))


def _grid_trials(basis):
    """One Dirac pair per forward-difference node; the last time row has none."""
    if isinstance(basis, GridBasis1D):
        rows = range(basis.size - 1)
        nodes = basis.nodes
        return TrialSet(
            tuple(Trial(CellIndicator(basis, r), Dirac((float(nodes[r]),)), node=r) for r in rows)
        )
    if isinstance(basis, GridBasis2D):
        count = basis.n_t * basis.n_x
        nodes = basis.nodes
        return TrialSet(
            tuple(
                Trial(CellIndicator(basis, r), Dirac(tuple(map(float, nodes[r]))), node=r)
                for r in range(count)
            )
        )
    raise TypeError("grid trials require an indicator basis")


def make_trials(kind, **params) -> TrialSet:
    """Build a trial set.

    ``dirac``: ``points`` (pool), ``K``, ``seed`` - psi = 1 at sampled points.
    ``weak_ho``: ``K_t``, ``T`` - constant plus K_t cos/sin pairs on [0, T].
    ``weak_diffusion``: ``K_t``, ``K_x``, ``xi``, ``T`` - slab-gated Fourier trials.
    ``grid``: ``basis`` - one Dirac pair per forward-difference node.
    """
    kind = kind.lower()
    if kind == "dirac":
        return _dirac_trials(**params)
    if kind == "weak_ho":
        return _weak_ho_trials(**params)
    if kind == "weak_diffusion":
        return _weak_diffusion_trials(**params)
    if kind == "grid":
        return _grid_trials(**params)
    raise ValueError(f"unknown trial kind {kind!r}")


def uniform_points(basis, count, rng):
    """Uniform samples over a basis domain (flat for 1-D, (N, 2) for 2-D)."""
    rng = np.random.default_rng(rng)
    cols = [rng.uniform(lo, hi, size=count) for lo, hi in basis.domain]
    return cols[0] if len(cols) == 1 else np.column_stack(cols)
