"""Tests for the closed-form Gaussian task risks."""

import numpy as np
import pytest

from trk.distributions import Gaussian1D, GaussianJoint, GaussianND, gaussian_kl, gaussian_w2, sample
from trk.gaussian_lab import (
    GaussianTask,
    RiskDecomposition,
    augment_features,
    basic_case_risks,
    conditionally_independent_augmentation,
    feature_augmentation_risks,
    optimal_linear_model,
    optimal_output_initializer,
    output_augmentation_laws,
    output_augmentation_risks,
    predictive_laws,
    random_basic_pair,
    random_task,
    regret,
    restrict_inputs,
    restrict_outputs,
    risk_regret_residual,
)
from trk.transfer_core import (
    AffineModel,
    IdentityMap,
    TransportPair,
    output_risk_kl,
    output_risk_w,
)


def scalar_task(var_x, cov_xy, var_y, mean_x=0.0, mean_y=0.0, role="source"):
    joint = GaussianJoint(
        mean_x=[mean_x], mean_y=[mean_y], cov_xx=[[var_x]], cov_xy=[[cov_xy]], cov_yy=[[var_y]]
    )
    return GaussianTask(joint, role=role)


def mc_loss_gap(source, target, n=200_000, seed=0):
    """Monte-Carlo estimate of the excess squared loss on the target task."""
    cloud = sample(target.joint, n, seed)
    d = target.dim_x
    x, y = cloud.points[:, :d], cloud.points[:, d]
    f_s = optimal_linear_model(source)
    f_t = optimal_linear_model(target)
    loss_s = np.mean((y - f_s(x)[:, 0]) ** 2)
    loss_t = np.mean((y - f_t(x)[:, 0]) ** 2)
    return loss_s - loss_t


class TestRiskDecomposition:
    def test_total_computed(self):
        dec = RiskDecomposition(0.25, 0.5)
        assert dec.total == pytest.approx(0.75)

    def test_inconsistent_total_rejected(self):
        with pytest.raises(ValueError, match="total"):
            RiskDecomposition(0.25, 0.5, total=1.0)

    def test_negative_term_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            RiskDecomposition(-0.1, 0.0)


class TestOptimalLinearModel:
    def test_identity_input_covariance(self):
        joint = GaussianJoint(
            mean_x=[0.0, 0.0], mean_y=[0.0], cov_xx=np.eye(2), cov_xy=[[0.5], [0.0]],
            cov_yy=[[1.0]],
        )
        model = optimal_linear_model(GaussianTask(joint))
        np.testing.assert_allclose(model.weights, [[0.5, 0.0]], atol=1e-12)
        np.testing.assert_allclose(model.bias, [0.0], atol=1e-12)

    def test_independent_output_predicts_mean(self):
        task = scalar_task(2.0, 0.0, 1.0, mean_x=3.0, mean_y=-1.5)
        model = optimal_linear_model(task)
        np.testing.assert_allclose(model.weights, [[0.0]], atol=1e-12)
        np.testing.assert_allclose(model.bias, [-1.5], atol=1e-12)

    def test_matches_least_squares_on_samples(self):
        task = random_task(3, 1, seed=51)
        cloud = sample(task.joint, 100_000, seed=52)
        x, y = cloud.points[:, :3], cloud.points[:, 3]
        design = np.concatenate([x, np.ones((len(y), 1))], axis=1)
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        model = optimal_linear_model(task)
        np.testing.assert_allclose(model.weights[0], coef[:3], atol=1e-2)
        np.testing.assert_allclose(model.bias[0], coef[3], atol=1e-2)

    def test_singular_input_covariance_rejected(self):
        joint = GaussianJoint(
            mean_x=[0.0, 0.0], mean_y=[0.0], cov_xx=[[1.0, 1.0], [1.0, 1.0]],
            cov_xy=[[0.1], [0.1]], cov_yy=[[1.0]],
        )
        with pytest.raises(ValueError, match="singular"):
            optimal_linear_model(GaussianTask(joint))


class TestPredictiveLaws:
    def test_moments_by_hand(self):
        # Source w = 1/2 on target inputs with variance 4: var_st = 1.
        source = scalar_task(2.0, 1.0, 1.5)
        target = scalar_task(4.0, 1.0, 1.0, mean_x=1.0, mean_y=2.0, role="target")
        p_st, p_t = predictive_laws(source, target)
        assert p_st.mean == pytest.approx(0.5)  # w_s * mu_tx + b_s = 0.5
        assert p_st.variance == pytest.approx(1.0)
        assert p_t.mean == pytest.approx(2.0)
        assert p_t.variance == pytest.approx(0.25)  # (1/4)^2 * 4


class TestBasicCaseRisks:
    def test_identical_tasks_zero(self):
        source, _ = random_basic_pair(2, seed=53)
        target = GaussianTask(source.joint, role="target")
        kl, w = basic_case_risks(source, target)
        assert kl.total == pytest.approx(0.0, abs=1e-12)
        assert w.total == pytest.approx(0.0, abs=1e-12)

    def test_pure_mean_shift(self):
        # Same covariances, shifted output mean: only the bias terms move.
        source = scalar_task(1.0, 0.5, 1.0)
        target = scalar_task(1.0, 0.5, 1.0, mean_y=0.7, role="target")
        kl, w = basic_case_risks(source, target)
        var_st = 0.25  # w = 1/2, var = w^2 * 1
        assert kl.variance_term == pytest.approx(0.0, abs=1e-14)
        assert kl.bias_term == pytest.approx(0.7**2 / (2 * var_st), abs=1e-12)
        assert w.variance_term == pytest.approx(0.0, abs=1e-14)
        assert w.bias_term == pytest.approx(0.49, abs=1e-12)

    def test_matched_prediction_variances(self):
        # Different joints, same regression slope: variance terms vanish.
        source = scalar_task(2.0, 1.0, 1.0)
        target = scalar_task(1.0, 0.5, 1.0, role="target")
        kl, w = basic_case_risks(source, target)
        assert kl.variance_term == pytest.approx(0.0, abs=1e-14)
        assert w.variance_term == pytest.approx(0.0, abs=1e-14)

    def test_matches_transfer_core_closed_forms(self):
        for seed in range(20):
            source, target = random_basic_pair(int(seed % 3) + 1, seed=100 + seed)
            kl, w = basic_case_risks(source, target)
            p_st, p_t = predictive_laws(source, target)
            assert kl.total == pytest.approx(output_risk_kl(p_st, p_t), abs=1e-9)
            assert w.total == pytest.approx(gaussian_w2(p_t, p_st), abs=1e-9)

    def test_matches_monte_carlo(self):
        source, target = random_basic_pair(2, seed=54)
        kl, w = basic_case_risks(source, target)
        p_st, p_t = predictive_laws(source, target)
        # Sample the target prediction law and average the log density ratio.
        draws = sample(p_t, 300_000, seed=55).points[:, 0]

        def log_pdf(x, law):
            return -0.5 * ((x - law.mean) ** 2 / law.variance + np.log(2 * np.pi * law.variance))

        kl_mc = np.mean(log_pdf(draws, p_t) - log_pdf(draws, p_st))
        assert kl.total == pytest.approx(kl_mc, abs=2e-2)
        a = np.sort(draws)
        b = np.sort(sample(p_st, 300_000, seed=56).points[:, 0])
        w_mc = np.mean((a - b) ** 2)
        assert w.total == pytest.approx(w_mc, abs=2e-2)

    def test_degenerate_source_predictor_rejected(self):
        source = scalar_task(1.0, 0.0, 1.0)  # w_s = 0
        target = scalar_task(1.0, 0.5, 1.0, role="target")
        with pytest.raises(ValueError, match="degenerate"):
            basic_case_risks(source, target)

    def test_dimension_mismatch_rejected(self):
        source, _ = random_basic_pair(2, seed=57)
        _, target = random_basic_pair(3, seed=58)
        with pytest.raises(ValueError, match="mismatch"):
            basic_case_risks(source, target)


class TestRegret:
    def test_identical_tasks_zero(self):
        source, _ = random_basic_pair(3, seed=59)
        target = GaussianTask(source.joint, role="target")
        assert regret(source, target) == pytest.approx(0.0, abs=1e-12)

    def test_doubled_weights_instance(self):
        # w_s = 1 = 2 w_t with zero means: regret is ||cov^1/2 w_t||^2 = 1/4.
        source = scalar_task(1.0, 1.0, 1.5)
        target = scalar_task(1.0, 0.5, 1.0, role="target")
        assert regret(source, target) == pytest.approx(0.25, abs=1e-12)

    def test_matches_monte_carlo_loss_gap(self):
        for seed in range(5):
            source, target = random_basic_pair(2, seed=200 + seed)
            gap = mc_loss_gap(source, target, n=400_000, seed=300 + seed)
            assert regret(source, target) == pytest.approx(gap, abs=1e-2)


class TestRiskRegretResidual:
    def test_identity_and_sign(self):
        for seed in range(50):
            source, target = random_basic_pair(int(seed % 3) + 1, seed=400 + seed)
            risk, reg, residual = risk_regret_residual(source, target)
            assert reg == pytest.approx(risk + residual, abs=1e-9)
            assert residual >= -1e-12
            assert risk <= reg + 1e-12

    def test_parallel_weights_close_the_gap(self):
        # Same-direction weights make Cauchy-Schwarz tight: risk == regret.
        source = scalar_task(1.0, 1.0, 1.5)
        target = scalar_task(1.0, 0.5, 1.0, role="target")
        risk, reg, residual = risk_regret_residual(source, target)
        assert residual == pytest.approx(0.0, abs=1e-12)
        assert risk == pytest.approx(reg, abs=1e-12)

    def test_risk_value_matches_decomposition(self):
        source, target = random_basic_pair(2, seed=60)
        risk, _, _ = risk_regret_residual(source, target)
        _, w = basic_case_risks(source, target)
        assert risk == pytest.approx(w.total, abs=1e-12)


class TestFeatureAugmentation:
    def base_source(self, seed=61):
        return random_task(2, 1, seed=seed, role="source")

    def test_conditionally_independent_augmentation_is_free(self):
        rng = np.random.default_rng(62)
        source = self.base_source()
        cov_cross = rng.normal(scale=0.2, size=(2, 1))
        target = conditionally_independent_augmentation(
            source, mean_new=[0.3], cov_new=[[1.0]], cov_cross=cov_cross
        )
        kl, w = feature_augmentation_risks(source, target)
        assert kl.total == pytest.approx(0.0, abs=1e-9)
        assert w.total == pytest.approx(0.0, abs=1e-9)
        # Projection optimality: the target model ignores the new coordinate.
        w_s = optimal_linear_model(source).weights[0]
        w_t = optimal_linear_model(target).weights[0]
        np.testing.assert_allclose(w_t[:2], w_s, atol=1e-9)
        np.testing.assert_allclose(w_t[2:], 0.0, atol=1e-9)

    def test_uncorrelated_augmentation_closed_form(self):
        # Orthogonal new feature with direct output correlation c: the
        # explained-variance ratio is 1 + c^2 / (v_new * var_s).
        source = scalar_task(2.0, 1.0, 1.0)
        c, v_new = 0.4, 1.5
        target = augment_features(
            source, mean_new=[0.0], cov_new=[[v_new]], cov_cross=np.zeros((1, 1)),
            cov_new_y=[[c]],
        )
        kl, w = feature_augmentation_risks(source, target)
        var_s = 1.0**2 / 2.0
        ratio = 1.0 + c**2 / (v_new * var_s)
        assert kl.variance_term == pytest.approx(0.5 * (ratio - np.log(ratio) - 1.0), abs=1e-12)
        assert kl.bias_term == 0.0
        var_t = var_s * ratio
        assert w.variance_term == pytest.approx(
            (np.sqrt(var_t) - np.sqrt(var_s)) ** 2, abs=1e-12
        )
        assert w.bias_term == 0.0
        assert kl.total > 0.0 and w.total > 0.0

    def test_matches_gaussian_divergences_of_prediction_laws(self):
        # Independent route: both laws share the output mean, so the risks
        # are plain divergences between N(mu, var_s) and N(mu, var_t).
        for seed in range(10):
            full = random_task(4, 1, seed=700 + seed, role="target")
            source = restrict_inputs(full, 2)
            kl, w = feature_augmentation_risks(source, full)
            sj, tj = source.joint, full.joint
            var_s = float(sj.cov_xy[:, 0] @ np.linalg.solve(sj.cov_xx, sj.cov_xy[:, 0]))
            var_t = float(tj.cov_xy[:, 0] @ np.linalg.solve(tj.cov_xx, tj.cov_xy[:, 0]))
            mu = float(tj.mean_y[0])
            p_st, p_t = Gaussian1D(mu, var_s), Gaussian1D(mu, var_t)
            assert kl.total == pytest.approx(gaussian_kl(p_t, p_st), abs=1e-9)
            assert w.total == pytest.approx(gaussian_w2(p_t, p_st), abs=1e-9)

    def test_no_harm_in_explained_variance(self):
        # More features never reduce the optimum's explained variance.
        for seed in range(50):
            full = random_task(3, 1, seed=800 + seed, role="target")
            source = restrict_inputs(full, 2)
            sj, tj = source.joint, full.joint
            var_s = float(sj.cov_xy[:, 0] @ np.linalg.solve(sj.cov_xx, sj.cov_xy[:, 0]))
            var_t = float(tj.cov_xy[:, 0] @ np.linalg.solve(tj.cov_xx, tj.cov_xy[:, 0]))
            assert var_t >= var_s - 1e-10

    def test_embedding_violation_rejected(self):
        source = self.base_source()
        other = random_task(3, 1, seed=63, role="target")
        with pytest.raises(ValueError, match="embed"):
            feature_augmentation_risks(source, other)

    def test_needs_added_coordinates(self):
        source = self.base_source()
        with pytest.raises(ValueError, match="add feature coordinates"):
            feature_augmentation_risks(source, GaussianTask(source.joint, role="target"))


class TestOutputAugmentation:
    def make_pair(self, seed, d=2, l=1, k=1):
        target = random_task(d, l + k, seed=seed, role="target")
        source = restrict_outputs(target, l)
        return source, target

    def test_optimal_initializer_gives_zero_risk(self):
        for seed in range(10):
            source, target = self.make_pair(900 + seed)
            init = optimal_output_initializer(source, target)
            kl, w, dec = output_augmentation_risks(source, target, init)
            assert kl == pytest.approx(0.0, abs=1e-9)
            assert w == pytest.approx(0.0, abs=1e-9)
            assert dec.total == pytest.approx(0.0, abs=1e-9)

    def test_eigenvalue_route_matches_trace_logdet(self):
        rng = np.random.default_rng(64)
        for seed in range(10):
            source, target = self.make_pair(1000 + seed, d=3, l=1, k=2)
            init = optimal_output_initializer(source, target)
            noisy = AffineModel(
                init.weights + rng.normal(scale=0.3, size=init.weights.shape),
                init.bias + rng.normal(scale=0.3, size=init.bias.shape),
            )
            kl, _, dec = output_augmentation_risks(source, target, noisy)
            assert dec.total == pytest.approx(kl, abs=1e-9)
            assert dec.variance_term >= -1e-12
            assert dec.bias_term >= -1e-12

    def test_bias_term_is_the_quadratic_form(self):
        source, target = self.make_pair(65)
        init = optimal_output_initializer(source, target)
        shifted = AffineModel(init.weights, init.bias + 0.7)
        _, _, dec = output_augmentation_risks(source, target, shifted)
        p_st, p_t = output_augmentation_laws(source, target, shifted)
        diff = p_t.mean - p_st.mean
        expected = 0.5 * diff @ np.linalg.solve(p_st.cov, diff)
        assert dec.bias_term == pytest.approx(expected, abs=1e-12)
        # A pure bias shift leaves the covariances equal.
        assert dec.variance_term == pytest.approx(0.0, abs=1e-12)

    def test_w_risk_matches_transport_pair_route(self):
        source, target = self.make_pair(66)
        init = AffineModel(np.array([[0.2, -0.1]]), np.array([0.4]))
        _, w, _ = output_augmentation_risks(source, target, init)
        source_model = optimal_linear_model(source)
        stacked = AffineModel(
            np.vstack([source_model.weights, init.weights]),
            np.concatenate([source_model.bias, init.bias]),
        )
        pair = TransportPair(
            IdentityMap(2), IdentityMap(stacked.out_dim), stacked, mode="y_only"
        )
        _, p_t = output_augmentation_laws(source, target, init)
        route = output_risk_w(pair, target.joint.x_marginal(), p_t, p=2.0)
        assert w == pytest.approx(route, abs=1e-12)

    def test_singular_intermediate_covariance_rejected(self):
        source, target = self.make_pair(67)
        dead = AffineModel(np.zeros((1, 2)), np.zeros(1))
        with pytest.raises(ValueError, match="singular"):
            output_augmentation_risks(source, target, dead)

    def test_initializer_dimension_checked(self):
        source, target = self.make_pair(68)
        wrong = AffineModel(np.zeros((2, 2)), np.zeros(2))
        with pytest.raises(ValueError, match="initializer"):
            output_augmentation_risks(source, target, wrong)

    def test_embedding_violation_rejected(self):
        source, _ = self.make_pair(69)
        _, other = self.make_pair(70)
        with pytest.raises(ValueError, match="embed"):
            output_augmentation_risks(source, other, AffineModel(np.zeros((1, 2)), np.zeros(1)))


class TestGenerators:
    def test_random_task_deterministic(self):
        a = random_task(2, 1, seed=71)
        b = random_task(2, 1, seed=71)
        np.testing.assert_array_equal(a.joint.cov_xx, b.joint.cov_xx)
        np.testing.assert_array_equal(a.joint.mean_y, b.joint.mean_y)

    def test_random_task_spectrum_bounds(self):
        task = random_task(3, 2, seed=72, eig_range=(0.5, 2.0))
        eigs = np.linalg.eigvalsh(task.joint.full().cov)
        assert eigs.min() >= 0.5 - 1e-9
        assert eigs.max() <= 2.0 + 1e-9

    def test_restrictions_are_consistent(self):
        task = random_task(3, 2, seed=73)
        sub = restrict_inputs(task, 2)
        np.testing.assert_array_equal(sub.joint.cov_xx, task.joint.cov_xx[:2, :2])
        sub_out = restrict_outputs(task, 1)
        np.testing.assert_array_equal(sub_out.joint.cov_yy, task.joint.cov_yy[:1, :1])

    def test_role_validated(self):
        with pytest.raises(ValueError, match="role"):
            GaussianTask(random_task(1, 1, seed=74).joint, role="student")
