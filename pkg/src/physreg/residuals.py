"""Residual-form constraints: pairings, constraint matrices and residual maps.

Every trial pair reduces to a weighted sum over evaluation nodes: a Dirac pair
is one node weighted by ``psi(x_k)``, a Lebesgue pair is a trapezoid grid
weighted by ``psi * w_q``.  Trials sharing a measure share nodes, so jets are
evaluated once per group.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import Constant, Dirac, Lebesgue, Trial, TrialSet, make_trials
from .errors import OperatorMismatchError, ShapeError
from .operators import jet_maps


def pair(field, trial):
    """``<field, psi>_mu`` for a single trial pair."""
    psi, mu = trial.psi, trial.measure
    if isinstance(mu, Dirac):
        pt = np.asarray(mu.point, dtype=float)
        pt = pt if len(pt) == 1 else pt.reshape(1, -1)
        vals = np.asarray(field(pt), dtype=float).reshape(-1)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"non-finite field value at {mu.point}")
        return float(vals[0] * psi(pt)[0])
    nodes, weights = mu.quadrature()
    vals = np.asarray(field(nodes), dtype=float).reshape(-1)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite field value at a quadrature node")
    return float(np.sum(weights * vals * psi(nodes)))


@dataclass
class _Group:
    rows: np.ndarray  # trial indices in this group
    weights: object  # (len(rows), n_nodes) pairing weights
    where: object  # points or node indices
    maps: dict | None  # slot -> (n_nodes, d); None until materialised


def _dirac_where(trials, discrete, ndim):
    if discrete:
        nodes = [t.node for t in trials]
        if any(n is None for n in nodes):
            raise OperatorMismatchError("difference operators need grid trials (with node indices)")
        return np.asarray(nodes, dtype=int)
    pts = np.asarray([t.measure.point for t in trials], dtype=float)
    return pts[:, 0] if ndim == 1 else pts


def _groups(op, basis, trials):
    dirac = [k for k, t in enumerate(trials) if isinstance(t.measure, Dirac)]
    groups = []
    if dirac:
        sub = [trials[k] for k in dirac]
        where = _dirac_where(sub, op.discrete, basis.ndim)
        pts = np.asarray([t.measure.point for t in sub], dtype=float)
        pts = pts[:, 0] if basis.ndim == 1 else pts
        psi = np.array([t.psi(pts[i:i + 1])[0] for i, t in enumerate(sub)])
        groups.append(_Group(np.asarray(dirac), sp.diags(psi, format="csr"), where, None))
    by_measure = {}
    for k, t in enumerate(trials):
        if isinstance(t.measure, Lebesgue):
            by_measure.setdefault(t.measure, []).append(k)
    if by_measure and op.discrete:
        raise OperatorMismatchError("difference operators only pair with Dirac grid trials")
    for mu, rows in by_measure.items():
        nodes, wq = mu.quadrature()
        weights = np.vstack([wq * trials[k].psi(nodes) for k in rows])
        groups.append(_Group(np.asarray(rows), weights, nodes, None))
    return groups


class ConstraintSystem:
    """Residual map ``p(w)`` in R^K over a basis of size ``d``.

    Linear systems hold the constant matrix ``D`` (``p(w) = D w``); nonlinear
    ones evaluate the operator on jets and chain-rule the Jacobian.
    """

    def __init__(self, K, d, D=None, op=None, groups=None):
        self.K, self.d = int(K), int(d)
        self.D = D
        self.op = op
        self._groups = groups or []

    @property
    def linear(self):
        return self.D is not None

    @classmethod
    def from_matrix(cls, D):
        D = D if sp.issparse(D) else np.atleast_2d(np.asarray(D, dtype=float))
        return cls(D.shape[0], D.shape[1], D=D)

    @classmethod
    def bind(cls, op, basis, trials, keep_maps=None):
        """Assemble the constraint system for ``op`` over ``basis`` and ``trials``."""
        groups = _groups(op, basis, trials)
        K, d = len(trials), basis.size
        if op.linear and not keep_maps:
            return cls(K, d, D=_linear_matrix(op, basis, groups, K, d), op=op)
        for g in groups:
            g.maps = jet_maps(op, basis, g.where)
        return cls(K, d, op=op, groups=groups)

    def _check(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape[0] != self.d:
            raise ShapeError(f"weight vector has length {w.shape[0]}, expected {self.d}")
        return w

    def residual(self, w):
        """``p(w)``; ``w`` may be ``(d,)`` or a ``(d, B)`` batch."""
        w = self._check(w)
        if self.linear:
            return np.asarray(self.D @ w)
        out = np.zeros((self.K,) + w.shape[1:])
        for g in self._groups:
            value, _ = self._jet_eval(g, w)
            out[g.rows] = g.weights @ value
        return out

    def jacobian(self, w):
        w = self._check(w)
        if self.linear:
            return self.D
        blocks = []
        sparse = False
        for g in self._groups:
            _, partials = self._jet_eval(g, w)
            acc = None
            for slot, m in g.maps.items():
                term = _scale_rows(m, partials[..., slot])
                acc = term if acc is None else acc + term
            block = g.weights @ acc
            sparse = sparse or sp.issparse(block)
            blocks.append((g.rows, block))
        if sparse and len(blocks) == 1 and np.array_equal(blocks[0][0], np.arange(self.K)):
            return sp.csr_matrix(blocks[0][1])
        J = np.zeros((self.K, self.d))
        for rows, block in blocks:
            J[rows] = block.toarray() if sp.issparse(block) else block
        return J

    def sq_norm_grad(self, w):
        """``||p(w)||^2`` per column and ``J(w)^T p(w)`` (half the gradient)."""
        w = self._check(w)
        if self.linear:
            p = np.asarray(self.D @ w)
            return np.sum(p**2, axis=0), np.asarray(self.D.T @ p)
        sq = np.zeros(w.shape[1:])
        grad = np.zeros_like(w)
        for g in self._groups:
            value, partials = self._jet_eval(g, w)
            p = g.weights @ value
            sq = sq + np.sum(p**2, axis=0)
            back = g.weights.T @ p
            for slot, m in g.maps.items():
                grad += m.T @ (partials[..., slot] * back)
        return sq, grad

    def _jet_eval(self, g, w):
        jet = np.zeros((g.weights.shape[1],) + w.shape[1:] + (4,))
        for slot, m in g.maps.items():
            jet[..., slot] = m @ w
        return self.op.evaluate(jet)


def _scale_rows(m, s):
    if sp.issparse(m):
        return sp.diags(s) @ m
    return m * s[:, None]


def _linear_matrix(op, basis, groups, K, d):
    _, partials = op.evaluate(np.zeros(4))
    blocks = []
    for g in groups:
        maps = jet_maps(op, basis, g.where)
        acc = None
        for slot, m in maps.items():
            if partials[slot] == 0:
                continue
            term = partials[slot] * m
            acc = term if acc is None else acc + term
        if acc is None:
            acc = sp.csr_matrix((g.weights.shape[1], d))
        blocks.append((g.rows, g.weights @ acc))
    if all(sp.issparse(b) for _, b in blocks) and blocks:
        order = np.concatenate([r for r, _ in blocks])
        stacked = sp.vstack([b for _, b in blocks], format="csr")
        perm = np.empty_like(order)
        perm[order] = np.arange(len(order))
        return stacked[perm]
    D = np.zeros((K, d))
    for rows, block in blocks:
        D[rows] = block.toarray() if sp.issparse(block) else block
    return D


def assemble_D(op, basis, trials):
    """``D[k, j] = <D[phi_j], psi_k>_{mu_k}`` for a linear operator."""
    if not op.linear:
        raise OperatorMismatchError("assemble_D needs a linear operator; use ConstraintSystem.bind")
    return ConstraintSystem.bind(op, basis, trials).D


def assemble_T(trials):
    """Gram matrix of the trial functions.

    Distinct Dirac measures are taken as mutually orthogonal, so the Dirac Gram
    is ``diag(psi_k(x_k)^2)``.  Lebesgue pairs integrate over the intersection
    of their boxes.
    """
    kinds = {type(t.measure) for t in trials}
    if len(kinds) > 1:
        raise ValueError("mixed-measure trial set")
    K = len(trials)
    if not K:
        return np.zeros((0, 0))
    if kinds == {Dirac}:
        diag = []
        for t in trials:
            pt = np.asarray(t.measure.point, dtype=float)
            pt = pt if len(pt) == 1 else pt.reshape(1, -1)
            diag.append(t.psi(pt)[0] ** 2)
        return sp.diags(np.asarray(diag), format="csr") if K > 2000 else np.diag(diag)
    G = np.zeros((K, K))
    cache = {}
    for a in range(K):
        for b in range(a, K):
            box = _intersect(trials[a].measure, trials[b].measure)
            if box is None:
                continue
            if box not in cache:
                cache[box] = box.quadrature()
            nodes, wq = cache[box]
            G[a, b] = G[b, a] = float(np.sum(wq * trials[a].psi(nodes) * trials[b].psi(nodes)))
    return G


def _intersect(m1, m2):
    box = []
    for (lo1, hi1), (lo2, hi2) in zip(m1.box, m2.box):
        lo, hi = max(lo1, lo2), min(hi1, hi2)
        if hi <= lo:
            return None
        box.append((lo, hi))
    nodes = tuple(max(a, b) for a, b in zip(m1.nodes, m2.nodes))
    return Lebesgue(tuple(box), nodes)


def residual(cs, w):
    return cs.residual(w)


def residual_jacobian(cs, w):
    return cs.jacobian(w)


def strong_check_system(op, basis, points=None):
    """Residual system at every grid node (difference ops) or at ``points``."""
    if op.discrete:
        return ConstraintSystem.bind(op, basis, make_trials("grid", basis=basis), keep_maps=True)
    pts = np.asarray(points, dtype=float)
    rows = pts if pts.ndim == 1 else [tuple(p) for p in pts]
    trials = TrialSet(tuple(Trial(Constant(1.0), Dirac(tuple(np.atleast_1d(p)))) for p in rows))
    return ConstraintSystem.bind(op, basis, trials, keep_maps=True)


def write_matrix_csv(D, path):
    """Row-major CSV with shortest round-trip float formatting."""
    D = D.toarray() if sp.issparse(D) else np.asarray(D)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in D:
            writer.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return np.asarray(rows, dtype=float)
