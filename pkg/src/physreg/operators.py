"""Differential and difference operators acting on a jet ``(u, u_t, u_x, u_xx)``.

Continuous operators read the jet from analytic basis derivatives.  Difference
operators read it from stencils on grid coefficients: ``u_t`` is the forward
time difference and ``u_xx`` the periodic centred second difference.  For the
oscillator, whose only variable is time, the ``u_xx`` slot carries d^2/dt^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .basis import DiffusionBasis, FourierBasis, GridBasis1D, GridBasis2D
from .errors import OperatorMismatchError

U, UT, UX, UXX = range(4)


@dataclass(frozen=True)
class Const:
    c: float = 1.0

    def __call__(self, u):
        return np.full_like(np.asarray(u, dtype=float), self.c)

    def deriv(self, u):
        return np.zeros_like(np.asarray(u, dtype=float))

    @property
    def sup(self):
        return abs(self.c)


@dataclass(frozen=True)
class Saturating:
    """``a / (1 + u^2)``."""

    a: float = 0.1

    def __call__(self, u):
        return self.a / (1.0 + np.asarray(u, dtype=float) ** 2)

    def deriv(self, u):
        u = np.asarray(u, dtype=float)
        return -2.0 * self.a * u / (1.0 + u**2) ** 2

    @property
    def sup(self):
        return abs(self.a)


@dataclass(frozen=True)
class HarmonicOscillator:
    k_s: float = 1.0
    m_s: float = 1.0
    discrete = False
    linear = True

    @property
    def omega(self):
        return float(np.sqrt(self.k_s / self.m_s))

    def evaluate(self, jet):
        jet = np.asarray(jet, dtype=float)
        ratio = self.k_s / self.m_s
        value = jet[..., UXX] + ratio * jet[..., U]
        partials = np.zeros_like(jet)
        partials[..., U] = ratio
        partials[..., UXX] = 1.0
        return value, partials

    def slots(self, basis):
        if not isinstance(basis, FourierBasis):
            raise OperatorMismatchError("the oscillator needs a 1-D Fourier basis")
        return {U: (0,), UXX: (2,)}


@dataclass(frozen=True)
class ContinuousDiffusion:
    c: float = 1.0
    discrete = False
    linear = True

    def evaluate(self, jet):
        jet = np.asarray(jet, dtype=float)
        value = jet[..., UT] - self.c * jet[..., UXX]
        partials = np.zeros_like(jet)
        partials[..., UT] = 1.0
        partials[..., UXX] = -self.c
        return value, partials

    def slots(self, basis):
        if not isinstance(basis, DiffusionBasis):
            raise OperatorMismatchError("continuous diffusion needs a diffusion basis")
        return {U: (0, 0), UT: (0, 1), UXX: (2, 0)}


@dataclass(frozen=True)
class EulerBernoulli:
    """Explicit-Euler residual ``(y[t+1] - y[t]) / h + P y[t] - Q y[t]^rho``."""

    P: float = 1.0
    Q: float = 0.0
    rho: int = 0
    h: float = 0.01
    discrete = True

    @property
    def linear(self):
        return self.Q == 0

    def evaluate(self, jet):
        jet = np.asarray(jet, dtype=float)
        u = jet[..., U]
        partials = np.zeros_like(jet)
        partials[..., UT] = 1.0
        if self.rho == 0:
            value = jet[..., UT] + self.P * u - self.Q
            partials[..., U] = self.P
        else:
            value = jet[..., UT] + self.P * u - self.Q * u**self.rho
            partials[..., U] = self.P - self.Q * self.rho * u ** (self.rho - 1)
        return value, partials

    def check_basis(self, basis):
        if not isinstance(basis, GridBasis1D):
            raise OperatorMismatchError("the Euler-Bernoulli residual needs a 1-D grid basis")
        if not np.isclose(basis.h, self.h, rtol=1e-12):
            raise OperatorMismatchError(f"grid step {basis.h} != operator step {self.h}")

    def stencils(self, basis, nodes):
        """Sparse maps from grid coefficients to jet slots at residual nodes."""
        self.check_basis(basis)
        nodes = np.asarray(nodes, dtype=int)
        if nodes.size and (nodes.min() < 0 or nodes.max() >= basis.size - 1):
            raise IndexError("residual node outside the forward-difference range")
        m, d = len(nodes), basis.size
        rows = np.arange(m)
        ident = sp.csr_matrix((np.ones(m), (rows, nodes)), shape=(m, d))
        fwd = sp.csr_matrix(
            (np.r_[np.full(m, -1.0 / self.h), np.full(m, 1.0 / self.h)],
             (np.r_[rows, rows], np.r_[nodes, nodes + 1])),
            shape=(m, d),
        )
        return {U: ident, UT: fwd}


@dataclass(frozen=True)
class FdmDiffusion:
    """Forward-time, centred-space residual with periodic wrap in x."""

    h_t: float
    h_x: float
    coef: Const | Saturating = field(default_factory=Const)
    discrete = True

    @property
    def linear(self):
        return isinstance(self.coef, Const)

    def evaluate(self, jet):
        jet = np.asarray(jet, dtype=float)
        u, uxx = jet[..., U], jet[..., UXX]
        c = self.coef(u)
        value = jet[..., UT] - c * uxx
        partials = np.zeros_like(jet)
        partials[..., U] = -self.coef.deriv(u) * uxx
        partials[..., UT] = 1.0
        partials[..., UXX] = -c
        return value, partials

    def check_basis(self, basis):
        if not isinstance(basis, GridBasis2D):
            raise OperatorMismatchError("the FDM residual needs a 2-D grid basis")
        if not (np.isclose(basis.h_t, self.h_t, rtol=1e-12) and np.isclose(basis.h_x, self.h_x, rtol=1e-12)):
            raise OperatorMismatchError("grid steps do not match the operator steps")

    def stencils(self, basis, nodes):
        self.check_basis(basis)
        nodes = np.asarray(nodes, dtype=int)
        nx = basis.n_x
        if nodes.size and (nodes.min() < 0 or nodes.max() >= basis.n_t * nx):
            raise IndexError("residual node outside the forward-difference range")
        m, d = len(nodes), basis.size
        rows = np.arange(m)
        tau, j = np.divmod(nodes, nx)
        left = tau * nx + (j - 1) % nx
        right = tau * nx + (j + 1) % nx
        ident = sp.csr_matrix((np.ones(m), (rows, nodes)), shape=(m, d))
        fwd = sp.csr_matrix(
            (np.r_[np.full(m, -1.0 / self.h_t), np.full(m, 1.0 / self.h_t)],
             (np.r_[rows, rows], np.r_[nodes, nodes + nx])),
            shape=(m, d),
        )
        inv = 1.0 / self.h_x**2
        lap = sp.csr_matrix(
            (np.r_[np.full(m, inv), np.full(m, -2 * inv), np.full(m, inv)],
             (np.r_[rows, rows, rows], np.r_[left, nodes, right])),
            shape=(m, d),
        )
        return {U: ident, UT: fwd, UXX: lap}


Operator = HarmonicOscillator | ContinuousDiffusion | EulerBernoulli | FdmDiffusion


def apply_jet_partials(op, jet):
    """Operator value on one jet and its partials w.r.t. ``(u, u_t, u_x, u_xx)``."""
    value, partials = op.evaluate(np.asarray(jet, dtype=float))
    return float(value), np.asarray(partials, dtype=float)


def jet_maps(op, basis, where):
    """Linear maps (one per used slot) from coefficients to jets at ``where``.

    ``where`` holds points for continuous operators and node indices for
    difference operators.
    """
    if op.discrete:
        return op.stencils(basis, where)
    if not basis.differentiable:
        raise OperatorMismatchError("continuous operators need a differentiable basis")
    return {slot: basis.jet(where, order) for slot, order in op.slots(basis).items()}


def apply(op, basis, w, where):
    """``D[w . phi]`` at one point (continuous) or one residual node (discrete)."""
    w = np.asarray(w, dtype=float)
    if w.shape != (basis.size,):
        raise ValueError(f"weights must have length {basis.size}")
    where = np.asarray([where]) if op.discrete else np.asarray(where, dtype=float).reshape(1, -1)
    if not op.discrete and basis.ndim == 1:
        where = where.reshape(-1)
    maps = jet_maps(op, basis, where)
    jet = np.zeros(4)
    for slot, m in maps.items():
        jet[slot] = (m @ w)[0]
    return float(op.evaluate(jet)[0])


def linear_part(op):
    """Linearisation about ``w = 0``."""
    if isinstance(op, EulerBernoulli):
        if op.linear:
            return op
        slope = op.P - op.Q if op.rho == 1 else op.P
        return EulerBernoulli(slope, 0.0, 0, op.h)
    if isinstance(op, FdmDiffusion):
        if op.linear:
            return op
        return FdmDiffusion(op.h_t, op.h_x, Const(float(op.coef(0.0))))
    return op
