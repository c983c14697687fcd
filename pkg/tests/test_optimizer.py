import numpy as np
import pytest

from subtrust.data import split_subminibatches
from subtrust.exceptions import DegenerateError
from subtrust.netcore import Batch, BlockVector, LossConfig, backward, forward, loss_only
from subtrust.optimizer import (
    STRATEGIES,
    SubspaceBasis,
    assemble_model,
    bootstrap,
    build_basis,
    stage_gradient,
    stage_positive,
    two_stage_iterate,
    variant_iterate,
)
from subtrust.trsolver import QuadModel

from conftest import dense_net, fd_dense_hessian, random_batch

NO_REG = LossConfig()


def toy_problem(rng, n=20, sizes=(2, 3, 2), seed_data=5):
    """Separable two-blob dataset plus a small net."""
    data_rng = np.random.default_rng(seed_data)
    half = n // 2
    a = data_rng.normal(size=(half, sizes[0])) * 0.3 + np.array([1.5] + [0] * (sizes[0] - 1))
    b = data_rng.normal(size=(n - half, sizes[0])) * 0.3 - np.array([1.5] + [0] * (sizes[0] - 1))
    inputs = np.vstack([a, b])
    targets = np.array([0] * half + [1] * (n - half))
    order = data_rng.permutation(n)
    batch = Batch(inputs[order], targets[order])
    params = dense_net(rng, list(sizes))
    return params, batch


class TestBuildBasis:
    def test_orthogonal_inputs_pass_through(self):
        grad = BlockVector([np.array([[1.0, 0.0, 0.0]])])
        prev = BlockVector([np.array([[0.0, 2.0, 0.0]])])
        basis = build_basis(grad, prev)
        assert basis.layer_column_count == [2]
        np.testing.assert_allclose(basis.layer_columns[0][0], [[1, 0, 0]], atol=0)
        np.testing.assert_allclose(basis.layer_columns[0][1], [[0, 1, 0]], atol=1e-15)

    def test_collinear_previous_step_is_dropped(self):
        grad = BlockVector([np.array([[3.0, 4.0]])])
        prev = BlockVector([np.array([[-1.5, -2.0]])])
        basis = build_basis(grad, prev)
        assert basis.layer_column_count == [1]
        np.testing.assert_allclose(basis.layer_columns[0][0], [[0.6, 0.8]], atol=1e-15)

    def test_gram_matrix_is_identity(self, rng):
        grad = BlockVector([rng.normal(size=(4, 5)) for _ in range(3)])
        prev = BlockVector([rng.normal(size=(4, 5)) for _ in range(3)])
        basis = build_basis(grad, prev)
        assert basis.dim == 6
        assert np.abs(basis.gram() - np.eye(6)).max() <= 1e-10

    def test_zero_everything_degenerates(self):
        zero = BlockVector([np.zeros((2, 3))])
        with pytest.raises(DegenerateError):
            build_basis(zero, zero.copy())

    def test_zero_gradient_keeps_momentum_column(self, rng):
        zero = BlockVector([np.zeros((2, 3))])
        prev = BlockVector([rng.normal(size=(2, 3))])
        basis = build_basis(zero, prev)
        assert basis.layer_column_count == [1]


class TestAssembleModel:
    def test_matches_dense_finite_difference_hessian(self, rng):
        params = dense_net(rng, [2, 2, 2])
        batch = random_batch(rng, 1, 2, 2)
        grad_like = BlockVector([rng.normal(size=b.shape) for b in params])
        prev_like = BlockVector([rng.normal(size=b.shape) for b in params])
        basis = build_basis(grad_like, prev_like)
        subbatches = [batch] * len(params)
        model = assemble_model(params, basis, grad_like, subbatches, NO_REG)

        H = fd_dense_hessian(params, batch, NO_REG)
        cols = [basis.apply(np.eye(basis.dim)[j]).flat() for j in range(basis.dim)]
        expected = np.array([[ci @ H @ cj for cj in cols] for ci in cols])
        np.testing.assert_allclose(model.B, expected, atol=1e-5)

    def test_reduced_gradient_matches_directional_differences(self, rng):
        params = dense_net(rng, [3, 3, 2])
        batch = random_batch(rng, 5, 3, 2)
        _, trace = forward(params, batch, NO_REG)
        grad = backward(params, trace, batch, NO_REG)
        basis = build_basis(grad, BlockVector([rng.normal(size=b.shape) for b in params]))
        model = assemble_model(params, basis, grad, [batch] * len(params), NO_REG)
        eps = 1e-5
        for j in range(basis.dim):
            d = basis.apply(np.eye(basis.dim)[j])
            fplus = loss_only(params + eps * d, batch, NO_REG)
            fminus = loss_only(params - eps * d, batch, NO_REG)
            assert model.r[j] == pytest.approx((fplus - fminus) / (2 * eps), abs=1e-5)
        # diagonal entries are Rayleigh quotients of unit columns: finite
        assert np.all(np.isfinite(np.diag(model.B)))

    def test_zero_gradient_gives_zero_reduced_gradient(self, rng):
        params = dense_net(rng, [3, 3, 2])
        batch = random_batch(rng, 4, 3, 2)
        prev = BlockVector([rng.normal(size=b.shape) for b in params])
        basis = build_basis(params.zeros_like(), prev)
        model = assemble_model(params, basis, params.zeros_like(),
                               [batch] * len(params), NO_REG)
        assert np.all(model.r == 0.0)


def quadratic_evaluator(w0, basis, model, f0=10.0):
    """Exact quadratic objective F(w0 - V a) = f0 + Q(a) for stage tests."""

    def evaluate(p):
        alpha = basis.project(w0 - p)
        return f0 + model.value(alpha)

    return evaluate


class TestStagePositive:
    def setup_model(self, rng, spd=True):
        w0 = dense_net(rng, [3, 4, 3])
        g = BlockVector([rng.normal(size=b.shape) for b in w0])
        prev = BlockVector([rng.normal(size=b.shape) for b in w0])
        basis = build_basis(g, prev)
        m = rng.normal(size=(basis.dim, basis.dim))
        B = m @ m.T + 0.5 * np.eye(basis.dim) if spd else -(m @ m.T) - np.eye(basis.dim)
        model = QuadModel(B, rng.normal(size=basis.dim))
        return w0, basis, model

    def test_exact_quadratic_accepts_newton_point_without_backtracking(self, rng):
        w0, basis, model = self.setup_model(rng, spd=True)
        f0 = 10.0
        evaluator = quadratic_evaluator(w0, basis, model, f0)
        new_params, f_after, frag = stage_positive(w0, basis, model, evaluator,
                                                   f_current=f0)
        assert frag["executed"] and frag["backtracks"] == 0
        newton = np.linalg.solve(model.B, model.r)
        expected_drop = -model.value(newton)
        assert f0 - f_after == pytest.approx(expected_drop, abs=1e-10)
        np.testing.assert_allclose(basis.project(w0 - new_params), newton, atol=1e-9)

    def test_hostile_evaluator_skips_the_stage(self, rng):
        w0, basis, model = self.setup_model(rng, spd=True)
        evaluator = lambda p: np.inf
        new_params, f_after, frag = stage_positive(w0, basis, model, evaluator,
                                                   max_halvings=8, f_current=1.0)
        assert not frag["executed"]
        assert frag["backtracks"] == 8
        assert new_params is w0

    def test_no_positive_curvature_skips(self, rng):
        w0, basis, model = self.setup_model(rng, spd=False)
        called = []
        evaluator = lambda p: called.append(1) or 0.0
        new_params, _, frag = stage_positive(w0, basis, model, evaluator, f_current=0.0)
        assert not frag["executed"] and new_params is w0 and not called

    def test_flat_reduced_gradient_skips(self, rng):
        w0, basis, _ = self.setup_model(rng, spd=True)
        model = QuadModel(np.eye(basis.dim), np.zeros(basis.dim))
        new_params, _, frag = stage_positive(w0, basis, model, lambda p: 0.0,
                                             f_current=0.0)
        assert not frag["executed"] and new_params is w0


class TestStageGradient:
    def one_dim_setup(self, rng, delta1):
        w0 = dense_net(rng, [2, 2])
        grad = BlockVector([rng.normal(size=b.shape) for b in w0])
        unit = grad * (1.0 / grad.norm())

        def evaluate(p):
            t = unit.dot(w0 - p)
            return (t - 1.0) ** 2

        return w0, grad, evaluate

    def test_growth_reaches_the_minimizer_scale(self, rng):
        w0, grad, evaluate = self.one_dim_setup(rng, 0.1)
        new_params, delta1, f_after, frag = stage_gradient(
            w0, grad, 0.1, evaluate, f_current=evaluate(w0)
        )
        assert frag["executed"]
        assert 1.0 / 1.3 <= delta1 <= 1.3
        assert f_after < 0.1

    def test_exact_minimizer_stops_after_one_growth_probe(self, rng):
        w0, grad, evaluate = self.one_dim_setup(rng, 1.0)
        new_params, delta1, _, frag = stage_gradient(
            w0, grad, 1.0, evaluate, f_current=evaluate(w0)
        )
        assert delta1 == 1.0
        assert frag["evals"] == 2  # first probe + one rejected growth trial

    def test_total_failure_keeps_params_and_halves_delta1(self, rng):
        w0 = dense_net(rng, [2, 2])
        grad = BlockVector([rng.normal(size=b.shape) for b in w0])
        evaluate = lambda p: 5.0  # never a strict decrease
        new_params, delta1, _, frag = stage_gradient(
            w0, grad, 0.8, evaluate, max_halvings=6, f_current=5.0
        )
        assert not frag["executed"]
        assert new_params is w0
        assert delta1 == 0.4

    def test_zero_gradient_skips(self, rng):
        w0 = dense_net(rng, [2, 2])
        new_params, delta1, _, frag = stage_gradient(
            w0, w0.zeros_like(), 0.5, lambda p: 0.0, f_current=0.0
        )
        assert not frag["executed"] and delta1 == 0.5 and new_params is w0


class TestBootstrap:
    def test_delta1_is_eps0_times_gradient_norm(self, rng):
        params, batch = toy_problem(rng)
        _, trace = forward(params, batch, NO_REG)
        g0 = backward(params, trace, batch, NO_REG)
        state = bootstrap(params, batch, 0.01, NO_REG)
        assert state.delta1 == 0.01 * g0.norm()
        assert (state.params - params).norm() == pytest.approx(0.01 * g0.norm(), rel=1e-12)
        assert state.iteration == 1

    def test_first_iterate_after_bootstrap_has_full_rank_basis(self, rng):
        params, batch = toy_problem(rng)
        state = bootstrap(params, batch, 0.01, NO_REG)
        _, trace = forward(state.params, batch, NO_REG)
        g1 = backward(state.params, trace, batch, NO_REG)
        basis = build_basis(g1, state.params - state.prev_params)
        assert basis.layer_column_count == [2, 2]

    def test_zero_gradient_degenerates(self):
        params = BlockVector([np.zeros((2, 3))])
        batch = Batch([[0.4, -0.2], [0.4, -0.2]], [0, 1])
        with pytest.raises(DegenerateError):
            bootstrap(params, batch, 0.01, NO_REG)


class TestTwoStageIterate:
    def run_iters(self, rng, strategy, iters=50, reg=0.0):
        cfg = LossConfig(reg_coeff=reg)
        params, batch = toy_problem(rng)
        subbatches = split_subminibatches(batch, len(params))
        state = bootstrap(params, batch, 0.01, cfg)
        reports = []
        for _ in range(iters):
            state, report = variant_iterate(strategy, state, batch, subbatches, cfg)
            reports.append(report)
        return state, reports

    def test_loss_decreases_monotonically_on_the_toy_problem(self, rng):
        state, reports = self.run_iters(rng, "two_stage", iters=50, reg=1e-4)
        for r in reports:
            assert r.loss_after_stage2 <= r.loss_before
            moved = r.stage1_executed or r.stage2_step > 0
            if moved:
                assert r.loss_after_stage2 < r.loss_before
        assert reports[-1].loss_after_stage2 < reports[0].loss_before * 0.5

    def test_stationary_point_is_a_no_op(self):
        params = BlockVector([np.zeros((2, 3))])
        batch = Batch([[0.4, -0.2], [0.4, -0.2]], [0, 1])  # irreducibly ambiguous
        subbatches = split_subminibatches(batch, 1)
        state = type("S", (), {})()
        from subtrust.optimizer import TwoStageState

        state = TwoStageState(params=params, prev_params=params.copy(),
                              delta1=0.1, iteration=1)
        new_state, report = two_stage_iterate(state, batch, subbatches, LossConfig())
        assert not report.stage1_executed and report.stage2_step == 0.0
        assert (new_state.params - params).norm() == 0.0
        assert report.loss_after_stage2 == report.loss_before

    def test_trajectories_are_deterministic(self, rng):
        s1, r1 = self.run_iters(np.random.default_rng(7), "two_stage", iters=20)
        s2, r2 = self.run_iters(np.random.default_rng(7), "two_stage", iters=20)
        assert np.array_equal(s1.params.flat(), s2.params.flat())
        assert [r.loss_after_stage2 for r in r1] == [r.loss_after_stage2 for r in r2]

    def test_basis_stays_orthonormal_along_the_run(self, rng):
        _, reports = self.run_iters(rng, "two_stage", iters=40)
        assert max(r.basis_orth_error for r in reports) <= 1e-9

    @pytest.mark.parametrize("strategy", STRATEGIES)
    def test_every_strategy_monotone_and_runs(self, rng, strategy):
        state, reports = self.run_iters(np.random.default_rng(11), strategy, iters=25)
        for r in reports:
            assert r.loss_after_stage2 <= r.loss_before
        assert reports[-1].loss_after_stage2 < reports[0].loss_before

    def test_quadratic_model_fidelity_third_order(self, rng):
        cfg = LossConfig()
        params, batch = toy_problem(rng, sizes=(3, 4, 3))
        batch = Batch(np.tanh(batch.inputs), batch.targets % 3)
        _, trace = forward(params, batch, cfg)
        grad = backward(params, trace, batch, cfg)
        prev = BlockVector([rng.normal(size=b.shape) for b in params])
        basis = build_basis(grad, prev)
        # same data for every product so B is the exact reduced Hessian
        model = assemble_model(params, basis, grad, [batch] * len(params), cfg)
        eig = model.eig
        active = np.flatnonzero(eig.values > eig.positive_cutoff())
        assert active.size > 0
        from subtrust.trsolver import solve_restricted

        alpha = solve_restricted(eig, active, 0.25).alpha
        f0 = loss_only(params, batch, cfg)
        errors = []
        scales = [1.0, 0.5, 0.25, 0.125]
        for s in scales:
            trial = basis.apply_into(params, s * alpha)
            err = abs(loss_only(trial, batch, cfg) - f0 - model.value(s * alpha))
            errors.append(max(err, 1e-300))
        slope = np.polyfit(np.log(scales), np.log(errors), 1)[0]
        assert slope >= 2.7

    def test_stage1_step_has_positive_gradient_inner_product(self, rng):
        cfg = LossConfig()
        params, batch = toy_problem(rng)
        subbatches = split_subminibatches(batch, len(params))
        state = bootstrap(params, batch, 0.01, cfg)
        for _ in range(10):
            pre = state.params
            _, trace = forward(pre, batch, cfg)
            g = backward(pre, trace, batch, cfg)
            state, report = two_stage_iterate(state, batch, subbatches, cfg)
            if report.stage1_executed:
                # recover the stage-1 displacement: it happened before stage 2
                # and moved loss strictly down along -V alpha with r^T alpha > 0
                assert report.loss_after_stage1 < report.loss_before


class TestVariantBehaviors:
    def test_saddle_model_makes_positive_only_stall_but_gradient_move(self, rng):
        w0 = dense_net(rng, [3, 3, 2])
        g = BlockVector([rng.normal(size=b.shape) for b in w0])
        basis = build_basis(g, BlockVector([rng.normal(size=b.shape) for b in w0]))
        dim = basis.dim
        values = -np.ones(dim)
        values[-1] = 1.0
        model = QuadModel(np.diag(values), np.zeros(dim))  # strict saddle, r = 0
        _, _, frag = stage_positive(w0, basis, model, lambda p: 0.0, f_current=0.0)
        assert not frag["executed"]  # no useful positive step at the saddle
        new_params, _, _, gfrag = stage_gradient(
            w0, g, 0.3, lambda p: -(w0 - p).norm(), f_current=0.0
        )
        assert gfrag["executed"] and (new_params - w0).norm() > 0.0
