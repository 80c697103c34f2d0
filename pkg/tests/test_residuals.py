import math

import numpy as np
import pytest
import scipy.sparse as sp

from physreg.basis import Constant, Dirac, Lebesgue, Trial, TrialSet, make_basis, make_trials, uniform_points
from physreg.datagen import generate_solution
from physreg.errors import OperatorMismatchError, ShapeError
from physreg.operators import (
    Const,
    ContinuousDiffusion,
    EulerBernoulli,
    FdmDiffusion,
    HarmonicOscillator,
    Saturating,
    apply,
)
from physreg.residuals import (
    ConstraintSystem,
    assemble_D,
    assemble_T,
    read_matrix_csv,
    residual,
    residual_jacobian,
    write_matrix_csv,
)
from physreg.variety import numeric_rank


def dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A)


def dirac_trials(basis, K, seed=0):
    return make_trials("dirac", points=uniform_points(basis, K, seed), K=K, seed=seed)


def fd_jacobian(cs, w, h=1e-6):
    cols = []
    for j in range(len(w)):
        e = np.zeros_like(w)
        e[j] = h
        cols.append((cs.residual(w + e) - cs.residual(w - e)) / (2 * h))
    return np.column_stack(cols)


def systems():
    fb = make_basis("fourier1d", d_t=3)
    db = make_basis("diffusion", d_x=2, d_t=2)
    g1 = make_basis("grid1d", T=0.2, h=0.01)
    g2 = make_basis("grid2d", T=0.03, h_t=0.01, xi=1.0, h_x=0.5)
    return [
        ("oscillator", HarmonicOscillator(), fb, dirac_trials(fb, 12)),
        ("oscillator-weak", HarmonicOscillator(), fb, make_trials("weak_ho", K_t=3, nodes=512)),
        ("diffusion", ContinuousDiffusion(1.0), db, dirac_trials(db, 15)),
        ("bernoulli-lin", EulerBernoulli(1.0, 0.0, 0, 0.01), g1, make_trials("grid", basis=g1)),
        ("bernoulli-nl", EulerBernoulli(1.0, 0.5, 2, 0.01), g1, make_trials("grid", basis=g1)),
        ("fdm-lin", FdmDiffusion(0.01, 0.5, Const(1.0)), g2, make_trials("grid", basis=g2)),
        ("fdm-nl", FdmDiffusion(0.01, 0.5, Saturating(0.1)), g2, make_trials("grid", basis=g2)),
    ]


class TestAssembleD:
    def test_oscillator_row_at_zero(self):
        b = make_basis("fourier1d", d_t=1)
        trials = make_trials("dirac", points=[0.0], K=1, seed=0)
        np.testing.assert_allclose(dense(assemble_D(HarmonicOscillator(), b, trials)), [[1, 0, 0]], atol=1e-14)

    def test_oscillator_rank(self):
        b = make_basis("fourier1d", d_t=16)
        D = assemble_D(HarmonicOscillator(), b, dirac_trials(b, 100))
        assert numeric_rank(D) == 31

    def test_dirac_rows_are_pointwise(self):
        b = make_basis("fourier1d", d_t=4)
        trials = dirac_trials(b, 6)
        D = dense(assemble_D(HarmonicOscillator(), b, trials))
        for k, t in enumerate(trials):
            row = [apply(HarmonicOscillator(), b, np.eye(b.size)[j], t.measure.point[0]) for j in range(b.size)]
            np.testing.assert_array_equal(D[k], row)

    def test_nonlinear_rejected(self):
        b = make_basis("grid1d", T=1.0, h=0.1)
        with pytest.raises(OperatorMismatchError):
            assemble_D(EulerBernoulli(1, 0.5, 2, 0.1), b, make_trials("grid", basis=b))

    def test_nested_trials_shrink_kernel(self):
        b = make_basis("fourier1d", d_t=6)
        full = dirac_trials(b, 20)
        dims = [b.size - numeric_rank(assemble_D(HarmonicOscillator(), b, full.head(k))) for k in (1, 3, 6, 20)]
        assert dims == sorted(dims, reverse=True)

    def test_weak_matches_analytic_pairing(self):
        b = make_basis("fourier1d", d_t=2)
        trials = make_trials("weak_ho", K_t=2, nodes=4096)
        D = dense(assemble_D(HarmonicOscillator(), b, trials))
        # D[cos 2x] = -3 cos 2x, paired with cos 2x over [0, 2 pi] gives -3 pi
        assert D[3, 3] == pytest.approx(-3 * math.pi, abs=1e-6)
        assert D[0, 0] == pytest.approx(2 * math.pi, abs=1e-10)
        assert np.abs(D[:, 1:3]).max() < 1e-9


class TestAssembleT:
    def test_dirac_identity(self):
        b = make_basis("fourier1d", d_t=2)
        np.testing.assert_array_equal(dense(assemble_T(dirac_trials(b, 7))), np.eye(7))

    def test_weak_constant(self):
        T = assemble_T(make_trials("weak_ho", K_t=0))
        np.testing.assert_allclose(T, [[2 * math.pi]])

    def test_weak_fourier_gram(self):
        T = assemble_T(make_trials("weak_ho", K_t=1, nodes=4096))
        np.testing.assert_allclose(T, np.diag([2 * math.pi, math.pi, math.pi]), atol=1e-6)

    def test_mixed_rejected(self):
        trials = TrialSet((Trial(Constant(), Dirac((0.1,))), Trial(Constant(), Lebesgue(((0.0, 1.0),), (8,)))))
        with pytest.raises(ValueError):
            assemble_T(trials)

    def test_psd_and_symmetric(self):
        T = assemble_T(make_trials("weak_diffusion", K_t=3, K_x=2, nodes=(32, 32)))
        np.testing.assert_allclose(T, T.T, atol=1e-12)
        assert np.linalg.eigvalsh(T).min() >= -1e-10


class TestResidual:
    def test_kernel_vector(self):
        b = make_basis("fourier1d", d_t=4)
        cs = ConstraintSystem.bind(HarmonicOscillator(), b, dirac_trials(b, 30))
        w = np.zeros(b.size)
        w[1], w[2] = 0.7, -1.2
        np.testing.assert_allclose(residual(cs, w), 0.0, atol=1e-12)

    def test_euler_trajectory(self):
        op = EulerBernoulli(1.0, 0.5, 2, 0.01)
        b = make_basis("grid1d", T=1.0, h=0.01)
        gt = generate_solution(op, 4, T=1.0)
        cs = ConstraintSystem.bind(op, b, make_trials("grid", basis=b))
        np.testing.assert_allclose(cs.residual(gt.grid[:-1]), 0.0, atol=1e-10)

    def test_zero_weights(self):
        for _, op, b, trials in systems():
            if isinstance(op, EulerBernoulli) and op.rho == 0 and op.Q:
                continue
            cs = ConstraintSystem.bind(op, b, trials)
            np.testing.assert_array_equal(cs.residual(np.zeros(b.size)), 0.0)

    def test_dimension_mismatch(self):
        b = make_basis("fourier1d", d_t=2)
        cs = ConstraintSystem.bind(HarmonicOscillator(), b, dirac_trials(b, 3))
        with pytest.raises(ShapeError):
            cs.residual(np.zeros(3))

    def test_batched_residual(self):
        _, op, b, trials = systems()[4]
        cs = ConstraintSystem.bind(op, b, trials)
        W = np.random.default_rng(0).normal(size=(b.size, 3))
        batch = cs.residual(W)
        for i in range(3):
            np.testing.assert_allclose(batch[:, i], cs.residual(W[:, i]))

    def test_linear_bind_matches_nonlinear_path(self):
        for _, op, b, trials in systems():
            if not op.linear:
                continue
            lin = ConstraintSystem.bind(op, b, trials)
            gen = ConstraintSystem.bind(op, b, trials, keep_maps=True)
            w = np.random.default_rng(1).normal(size=b.size)
            np.testing.assert_allclose(lin.residual(w), gen.residual(w), rtol=1e-10, atol=1e-9)


class TestJacobian:
    def test_linear_is_D(self):
        b = make_basis("fourier1d", d_t=3)
        cs = ConstraintSystem.bind(HarmonicOscillator(), b, dirac_trials(b, 10))
        assert residual_jacobian(cs, np.ones(b.size)) is cs.D

    def test_bernoulli_at_zero_is_linear_part(self):
        b = make_basis("grid1d", T=0.2, h=0.01)
        trials = make_trials("grid", basis=b)
        J = dense(ConstraintSystem.bind(EulerBernoulli(1.0, 0.5, 2, 0.01), b, trials).jacobian(np.zeros(b.size)))
        D = dense(assemble_D(EulerBernoulli(1.0, 0.0, 0, 0.01), b, trials))
        np.testing.assert_allclose(J, D, atol=1e-12)

    @pytest.mark.parametrize("name", [s[0] for s in systems()])
    def test_matches_fd(self, name):
        _, op, b, trials = next(s for s in systems() if s[0] == name)
        cs = ConstraintSystem.bind(op, b, trials, keep_maps=True)
        rng = np.random.default_rng(3)
        for _ in range(50):
            w = rng.normal(size=b.size)
            J = dense(cs.jacobian(w))
            fd = fd_jacobian(cs, w)
            assert np.abs(J - fd).max() <= 1e-5 * max(1.0, np.abs(J).max())

    def test_sq_norm_grad(self):
        _, op, b, trials = systems()[6]
        cs = ConstraintSystem.bind(op, b, trials)
        w = np.random.default_rng(5).normal(size=b.size)
        sq, g = cs.sq_norm_grad(w)
        p = cs.residual(w)
        assert sq == pytest.approx(p @ p)
        np.testing.assert_allclose(g, dense(cs.jacobian(w)).T @ p, rtol=1e-10, atol=1e-8)


class TestMatrixCsv:
    def test_round_trip(self, tmp_path):
        D = np.random.default_rng(0).normal(size=(4, 5)) * 1e3
        path = tmp_path / "D.csv"
        write_matrix_csv(D, path)
        assert np.array_equal(read_matrix_csv(path), D)
