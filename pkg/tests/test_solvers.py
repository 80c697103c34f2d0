import math

import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from physreg.basis import make_basis, make_trials, uniform_points
from physreg.datagen import generate_solution, make_dataset
from physreg.errors import ShapeError, SingularSystemError
from physreg.operators import Const, EulerBernoulli, FdmDiffusion, HarmonicOscillator, Saturating
from physreg.residuals import ConstraintSystem, assemble_T
from physreg.solvers import (
    OptimizerConfig,
    RegressionProblem,
    adam_batch,
    fit_pilr_linear,
    fit_pilr_soft,
    fit_ridge,
    mse,
    pilr_matrix,
    predict,
    soft_loss,
)


def ho_setup(d_t=4, n=20, K=50, seed=0, noise=0.01):
    b = make_basis("fourier1d", d_t=d_t)
    trials = make_trials("dirac", points=uniform_points(b, K, 0), K=K, seed=0)
    cs = ConstraintSystem.bind(HarmonicOscillator(), b, trials)
    gt = generate_solution(HarmonicOscillator(), seed)
    ds = make_dataset(gt, n, noise, seed=seed, n_test=200)
    return b, cs, assemble_T(trials), ds


class TestMse:
    def test_examples(self):
        assert mse([1, 2], [1, 2]) == 0
        assert mse([0, 0], [1, 1]) == 1
        assert mse([1, 2, 3], [2, 2, 2]) == pytest.approx(2 / 3)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            mse([1, 2], [1])


class TestPredict:
    def test_constant_slot(self):
        b = make_basis("fourier1d", d_t=3)
        np.testing.assert_allclose(predict(b, np.eye(b.size)[0], [0.1, 2.0, 5.0]), 1.0)

    def test_analytic_solution(self):
        b = make_basis("fourier1d", d_t=3)
        y0, v0, om = 0.8, -1.3, 1.0
        w = np.zeros(b.size)
        w[1], w[2] = y0, v0 / om
        t = np.linspace(0, 2 * math.pi, 50)
        np.testing.assert_allclose(predict(b, w, t), y0 * np.cos(om * t) + v0 / om * np.sin(om * t), atol=1e-12)

    def test_linear(self):
        b = make_basis("fourier1d", d_t=2)
        w1, w2 = np.random.default_rng(0).normal(size=(2, b.size))
        t = np.linspace(0, 6, 9)
        np.testing.assert_allclose(predict(b, w1 + w2, t), predict(b, w1, t) + predict(b, w2, t))


class TestRidge:
    def test_identity_example(self):
        rep = fit_ridge(RegressionProblem(np.eye(2), [1.0, 2.0], xi=1.0))
        np.testing.assert_allclose(rep.w, [1 / 3, 2 / 3])

    def test_interpolation(self):
        rng = np.random.default_rng(1)
        Phi = rng.normal(size=(5, 5))
        w = rng.normal(size=5)
        np.testing.assert_allclose(fit_ridge(RegressionProblem(Phi, Phi @ w)).w, w, atol=1e-10)

    def test_zero_target(self):
        Phi = np.random.default_rng(2).normal(size=(6, 3))
        np.testing.assert_array_equal(fit_ridge(RegressionProblem(Phi, np.zeros(6), xi=0.1)).w, 0.0)

    def test_singular(self):
        with pytest.raises(SingularSystemError):
            fit_ridge(RegressionProblem(np.ones((4, 2)), np.ones(4)))

    def test_dual_form_matches_primal(self):
        rng = np.random.default_rng(3)
        Phi = rng.normal(size=(6, 40))
        y = rng.normal(size=6)
        xi = 1e-3
        primal = la.solve(Phi.T @ Phi + 6 * xi * np.eye(40), Phi.T @ y, assume_a="pos")
        np.testing.assert_allclose(fit_ridge(RegressionProblem(Phi, y, xi=xi)).w, primal, rtol=1e-8, atol=1e-10)


class TestPilrLinear:
    @given(st.integers(0, 10_000), st.floats(1e-9, 1e-1))
    @settings(max_examples=30, deadline=None)
    def test_nu_zero_is_ridge(self, seed, xi):
        rng = np.random.default_rng(seed)
        Phi = rng.normal(size=(12, 7))
        y = rng.normal(size=12)
        D = rng.normal(size=(4, 7))
        a = fit_pilr_linear(RegressionProblem(Phi, y, xi=xi, nu=0.0), D, np.eye(4)).w
        b = fit_ridge(RegressionProblem(Phi, y, xi=xi)).w
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_large_nu_is_hard_constraint(self):
        b, cs, T, ds = ho_setup(d_t=8)
        Phi = b.design(ds.x_train)
        rep = fit_pilr_linear(RegressionProblem(Phi, ds.y_train, xi=1e-8, nu=1e8), cs.D, T)
        assert np.linalg.norm(cs.D @ rep.w) / np.linalg.norm(rep.w) <= 1e-3
        # exact oracle: least squares restricted to ker D
        N = la.null_space(cs.D)
        z = np.linalg.lstsq(Phi @ N, ds.y_train, rcond=None)[0]
        np.testing.assert_allclose(rep.w, N @ z, atol=1e-4)

    def test_monotone_constraint(self):
        b, cs, T, ds = ho_setup(d_t=8)
        Phi = b.design(ds.x_train)
        norms = [
            np.linalg.norm(cs.D @ fit_pilr_linear(RegressionProblem(Phi, ds.y_train, xi=1e-4, nu=nu), cs.D, T).w)
            for nu in (0, 1e-4, 1e-2, 1, 1e2)
        ]
        assert all(b <= a * (1 + 1e-9) for a, b in zip(norms, norms[1:]))

    def test_normal_equations(self):
        b, cs, T, ds = ho_setup(d_t=6)
        prob = RegressionProblem(b.design(ds.x_train), ds.y_train, xi=1e-3, nu=1e-2)
        rep = fit_pilr_linear(prob, cs.D, T)
        A = pilr_matrix(prob, cs.D.T @ T @ cs.D)
        rhs = prob.Phi.T @ prob.y
        assert np.linalg.norm(A @ rep.w - rhs) <= 1e-8 * np.linalg.norm(rhs)

    def test_sparse_path_matches_dense(self):
        h = 0.05
        b = make_basis("grid1d", T=1.0, h=h)
        op = EulerBernoulli(1.0, 0.0, 0, h)
        cs = ConstraintSystem.bind(op, b, make_trials("grid", basis=b))
        rng = np.random.default_rng(0)
        Phi = b.design(rng.uniform(0, 1, 8))
        y = rng.normal(size=8)
        T = np.eye(cs.K)
        prob = RegressionProblem(Phi, y, xi=1e-4, nu=1e-2)
        sparse = fit_pilr_linear(prob, cs.D, sp.csr_matrix(T)).w
        dense = fit_pilr_linear(prob, cs.D.toarray(), T).w
        np.testing.assert_allclose(sparse, dense, rtol=1e-10, atol=1e-12)

    def test_shape_errors(self):
        prob = RegressionProblem(np.eye(3), np.ones(3), xi=0.1)
        with pytest.raises(ShapeError):
            fit_pilr_linear(prob, np.ones((2, 4)), np.eye(2))
        with pytest.raises(ShapeError):
            fit_pilr_linear(prob, np.ones((2, 3)), np.eye(3))


def soft_systems():
    g1 = make_basis("grid1d", T=0.2, h=0.01)
    g2 = make_basis("grid2d", T=0.03, h_t=0.01, xi=1.0, h_x=0.5)
    fb = make_basis("fourier1d", d_t=3)
    return [
        (fb, ConstraintSystem.bind(HarmonicOscillator(), fb, make_trials("dirac", points=uniform_points(fb, 9, 0), K=9, seed=0))),
        (g1, ConstraintSystem.bind(EulerBernoulli(1.0, 0.5, 2, 0.01), g1, make_trials("grid", basis=g1))),
        (g2, ConstraintSystem.bind(FdmDiffusion(0.01, 0.5, Saturating(0.1)), g2, make_trials("grid", basis=g2))),
        (g2, ConstraintSystem.bind(FdmDiffusion(0.01, 0.5, Const(1.0)), g2, make_trials("grid", basis=g2))),
    ]


class TestSoft:
    @pytest.mark.parametrize("idx", range(4))
    def test_gradient_matches_fd(self, idx):
        b, cs = soft_systems()[idx]
        rng = np.random.default_rng(idx)
        x = np.asarray(uniform_points(b, 7, 1))
        prob = RegressionProblem(b.design(x), rng.normal(size=7), xi=1e-3, nu=1e-2)
        h = 1e-6
        for _ in range(20):
            w = rng.normal(size=b.size)
            _, g = soft_loss(prob, cs, w)
            fd = np.array([
                (soft_loss(prob, cs, w + h * e)[0] - soft_loss(prob, cs, w - h * e)[0]) / (2 * h)
                for e in np.eye(b.size)
            ])
            assert np.abs(fd - g).max() <= 1e-5 * max(1.0, np.abs(g).max())

    def test_matches_closed_form(self):
        b, cs, T, ds = ho_setup(d_t=4, n=30)
        Phi = b.design(ds.x_train)
        test = (b.design(ds.x_test), ds.y_test)
        xi, nu = 1e-4, 1e-2
        soft = fit_pilr_soft(
            RegressionProblem(Phi, ds.y_train, xi=xi, nu=nu, val=test, test=test), cs,
            OptimizerConfig(epochs=4000, patience=4000),
        )
        # the soft loss scales the residual by 1/K; the closed form takes nu / K
        closed = fit_pilr_linear(RegressionProblem(Phi, ds.y_train, xi=xi, nu=nu / cs.K, test=test), cs.D, T)
        assert abs(soft.mse_test - closed.mse_test) <= 0.05 * closed.mse_test

    def test_interpolant(self):
        rng = np.random.default_rng(4)
        Phi = rng.normal(size=(5, 5))
        w = rng.normal(size=5)
        cs = ConstraintSystem.from_matrix(np.zeros((1, 5)))
        prob = RegressionProblem(Phi, Phi @ w, val=(Phi, Phi @ w))
        rep = fit_pilr_soft(prob, cs, OptimizerConfig(epochs=5000, patience=5000, decay=1.0))
        assert rep.mse_train <= 1e-6

    def test_divergence_is_reported(self):
        Phi = np.eye(3)
        cs = ConstraintSystem.from_matrix(np.eye(3))
        prob = RegressionProblem(Phi, np.full(3, 1e300), val=(Phi, np.full(3, 1e300)))
        rep = fit_pilr_soft(prob, cs, OptimizerConfig(epochs=50))
        assert rep.diverged

    def test_batch_columns_are_independent(self):
        b, cs = soft_systems()[1]
        rng = np.random.default_rng(9)
        x = np.asarray(uniform_points(b, 8, 2))
        Phi, y = b.design(x), rng.normal(size=8)
        val = (Phi[:3], y[:3])
        opt = OptimizerConfig(epochs=300)
        xis, nus = [1e-4, 1e-3, 1e-2], [1e-3, 1e-5, 1e-2]
        W, best, epochs, _ = adam_batch(Phi, y, cs, xis, nus, opt, val=val)
        for i in range(3):
            Wi, bi, ei, _ = adam_batch(Phi, y, cs, [xis[i]], [nus[i]], opt, val=val)
            np.testing.assert_allclose(W[:, i], Wi[:, 0], rtol=1e-12, atol=1e-14)
            assert epochs[i] == ei[0]

    def test_dimension_mismatch(self):
        cs = ConstraintSystem.from_matrix(np.zeros((1, 4)))
        with pytest.raises(ShapeError):
            fit_pilr_soft(RegressionProblem(np.eye(3), np.ones(3)), cs)


class TestConfigValidation:
    def test_optimizer(self):
        with pytest.raises(ValueError):
            OptimizerConfig(lr=0)
        with pytest.raises(ValueError):
            OptimizerConfig(patience=0)

    def test_problem(self):
        with pytest.raises(ShapeError):
            RegressionProblem(np.eye(3), np.ones(2))
        with pytest.raises(ValueError):
            RegressionProblem(np.eye(2), np.ones(2), xi=-1)
