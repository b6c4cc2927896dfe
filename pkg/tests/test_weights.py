import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mwfdr.functionals import mean_G
from mwfdr.models import (
    HypothesisConfig,
    UnconditionalConfig,
    gaussian_density_f,
    gaussian_inverse_density,
    norm_isf,
    norm_sf,
)
from mwfdr.oracle import grid_search_optimal_weights, power_at_u
from mwfdr.weights import (
    ConstantWeights,
    InfeasibleWeightsError,
    InterpolatedWeights,
    OptimalGaussianWeights,
    ThresholdCollection,
    WeightMatrix,
    correct_sd,
    correct_su,
    gaussian_normalizer,
    limit_weights_continuous_gaussian,
    optimal_matrix_for,
    optimal_weight_matrix,
    optimal_weights_gaussian,
    optimal_weights_generic,
    random_weight_matrix,
    read_weight_csv,
    uniform_h1_weights,
    write_weight_csv,
)

FIG1_M = 1000


@pytest.fixture(scope="module")
def fig1_matrix():
    mu = 5 * np.arange(1, FIG1_M + 1) / FIG1_M
    return mu, optimal_weight_matrix(mu, 0.05, "unconditional")


class TestContainers:
    def test_column_sum_enforced(self):
        with pytest.raises(ValueError):
            WeightMatrix(np.full((3, 3), 0.9), 0.05)

    def test_corrected_allows_deficit(self):
        wm = WeightMatrix(np.full((3, 3), 0.9), 0.05, corrected=True)
        assert wm.corrected
        with pytest.raises(ValueError):
            WeightMatrix(np.full((3, 3), 1.1), 0.05, corrected=True)

    def test_threshold_monotonicity_enforced(self):
        w = np.array([[2.0, 0.0], [0.0, 2.0]])
        with pytest.raises(ValueError):
            WeightMatrix(w, 0.05)

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            WeightMatrix(np.ones((2, 2)), 1.0)

    def test_thresholds_clamped(self):
        w = np.zeros((4, 4))
        w[0] = 4.0
        tc = WeightMatrix(w, 0.9).thresholds()
        assert tc.delta[0, -1] == 1.0
        assert np.all(tc.delta <= 1.0)

    def test_linear_collection(self):
        tc = ThresholdCollection.linear(4, 0.05)
        assert np.allclose(tc.at(2), 0.025)
        assert np.all(tc.at(0) == 0)
        assert tc.padded().shape == (4, 5)

    def test_readonly(self):
        wm = WeightMatrix.constant(np.ones(3), 0.05)
        with pytest.raises(ValueError):
            wm.w[0, 0] = 2.0


class TestOptimalWeights:
    @pytest.mark.parametrize("mu", [0.5, 2.0, 4.0])
    @pytest.mark.parametrize("u", [0.01, 0.3, 1.0])
    def test_equal_means_give_uniform(self, mu, u):
        w = optimal_weights_gaussian(np.full(7, mu), 0.05, u)
        assert np.allclose(w, 1.0, rtol=1e-9)
        c = gaussian_normalizer(np.full(7, mu), 7 * 0.05 * u)
        assert c == pytest.approx(mu * (norm_isf(0.05 * u) - mu / 2), rel=1e-9, abs=1e-9)

    def test_all_equal_matrix_is_ones(self):
        wm = optimal_weight_matrix(np.full(10, 1.7), 0.1)
        assert np.allclose(wm.w, 1.0, rtol=1e-9)

    def test_m2_against_grid_search(self):
        mu = np.array([1.0, 2.0])
        alpha, u = 0.05, 1.0
        w = optimal_weights_gaussian(mu, alpha, u)
        c = gaussian_normalizer(mu, 2 * alpha * u)
        assert norm_sf(0.5 + c) + norm_sf(1 + c / 2) == pytest.approx(0.1, abs=1e-12)
        brute = grid_search_optimal_weights(mu, alpha, u, 1e-6)
        assert alpha * brute[0] * u == pytest.approx(alpha * w[0] * u, abs=1e-4)

    def test_sum_and_support(self, rng):
        mu = rng.uniform(0.1, 5, 40)
        h = rng.random(40) < 0.4
        w = optimal_weights_gaussian(mu, 0.05, 0.5, active=h)
        assert w.sum() == pytest.approx(40, rel=1e-9)
        assert np.all(w[~h] == 0)

    def test_conditional_infeasible(self):
        mu = np.array([0.0, 0.0, 0.0, 2.0])
        with pytest.raises(InfeasibleWeightsError):
            optimal_weight_matrix(mu, 0.3, "conditional")

    def test_unconditional_needs_positive_means(self):
        with pytest.raises(ValueError):
            optimal_weights_gaussian(np.array([0.0, 1.0]), 0.05, 0.5, active=[1, 1])

    def test_bad_u(self):
        with pytest.raises(ValueError):
            optimal_weights_gaussian(np.ones(3), 0.05, 0.0)

    def test_deep_tail_snaps_without_renormalising(self):
        mu = np.linspace(0.005, 5, 1000)
        w = optimal_weights_gaussian(mu, 0.05, 1 / 1000)
        assert w.sum() == pytest.approx(1000, rel=1e-9)
        assert np.all(w[:3] == 0)

    def test_generic_solver_matches_gaussian(self, rng):
        mu = rng.uniform(0.5, 4, 12)
        alpha, u = 0.1, 0.4
        finv = lambda y: gaussian_inverse_density(y, mu)  # noqa: E731
        assert np.allclose(optimal_weights_generic(finv, 12, alpha, u),
                           optimal_weights_gaussian(mu, alpha, u), rtol=1e-6)

    def test_matrix_for_config(self):
        cfg = HypothesisConfig.from_means([0, 0, 1, 2, 3])
        wm = optimal_matrix_for(cfg, 0.05)
        assert np.all(wm.w[:2] == 0)
        ucfg = UnconditionalConfig(pi0=0.5, mu=[1.0, 2.0])
        assert optimal_matrix_for(ucfg, 0.05).m == 2


class TestFigureOneShape:
    def test_column_sums(self, fig1_matrix):
        _, wm = fig1_matrix
        assert np.allclose(wm.w.sum(axis=0), FIG1_M, rtol=1e-9)

    def test_rows_monotone_and_bounded(self, fig1_matrix):
        _, wm = fig1_matrix
        d = wm.thresholds().delta
        assert np.all(np.diff(d, axis=1) >= -1e-12)
        assert np.all(wm.alpha * wm.w * np.arange(1, FIG1_M + 1) / FIG1_M <= 1.0)

    def test_peak_moves_to_small_means_as_u_grows(self, fig1_matrix):
        mu, wm = fig1_matrix
        peak_one = mu[np.argmax(wm.w[:, -1])]
        peak_small = mu[np.argmax(wm.w[:, 0])]
        assert peak_one < 2.5
        assert peak_one < peak_small

    def test_small_means_starved_at_small_u(self, fig1_matrix):
        mu, wm = fig1_matrix
        col = wm.w[:, 0] / wm.w[:, 0].max()
        assert np.all(col[mu < 0.5] < 1e-6)

    def test_corrections_ordered(self, fig1_matrix):
        _, wm = fig1_matrix
        su, sd = correct_su(wm), correct_sd(wm)
        assert np.all(sd.w >= su.w - 1e-15)
        assert np.all(su.w <= wm.w)
        assert np.all(np.diff(su.thresholds().delta, axis=1) >= -1e-12)
        assert np.all(np.diff(sd.thresholds().delta, axis=1) >= -1e-12)


class TestOptimality:
    @pytest.mark.parametrize("u", [0.05, 0.25, 0.5, 1.0])
    def test_beats_random_vectors(self, rng, u):
        mu = rng.uniform(0.2, 4, 20)
        alpha = 0.05
        star = optimal_weights_gaussian(mu, alpha, u)
        best = power_at_u(mu, alpha, u, star)
        others = rng.dirichlet(np.full(20, 0.7), size=200).T * 20
        assert np.all(power_at_u(mu, alpha, u, others) < best)

    @pytest.mark.parametrize("u", [0.1, 0.6])
    def test_stationarity(self, rng, u):
        mu = rng.uniform(0.3, 4, 25)
        alpha = 0.05
        w = optimal_weights_gaussian(mu, alpha, u)
        grad = alpha * u * gaussian_density_f(alpha * u * w, mu)
        assert np.allclose(grad, grad[0], rtol=1e-6)
        # the common value is exp(c) for the Gaussian family, up to the alpha*u factor
        c = gaussian_normalizer(mu, 25 * alpha * u)
        assert grad[0] == pytest.approx(alpha * u * np.exp(c), rel=1e-6)

    def test_mean_curve_dominates(self, rng):
        model = UnconditionalConfig(pi0=0.6, mu=rng.uniform(0.5, 3.5, 15))
        star = OptimalGaussianWeights(model.mu, 0.05)
        for u in (0.05, 0.3, 0.8):
            base = (0.05 * u * star.weights_at(u))
            g_star = model.pi0 * 0.05 * u + model.pi1 * np.mean(
                norm_sf(norm_isf(np.minimum(base, 1)) - model.mu))
            for _ in range(50):
                w = rng.dirichlet(np.ones(15)) * 15
                g_w = model.pi0 * 0.05 * u + model.pi1 * np.mean(
                    norm_sf(norm_isf(np.minimum(0.05 * u * w, 1)) - model.mu))
                assert g_w <= g_star + 1e-12

    def test_mean_curve_dominates_on_grid(self, rng):
        model = UnconditionalConfig(pi0=0.5, mu=rng.uniform(0.5, 3.5, 8))
        g_star = mean_G(model, optimal_matrix_for(model, 0.1).thresholds()).values
        for _ in range(20):
            w = rng.dirichlet(np.ones(8)) * 8
            g_w = mean_G(model, WeightMatrix.constant(w, 0.1).thresholds()).values
            assert np.all(g_w <= g_star + 1e-12)

    @settings(max_examples=40)
    @given(st.lists(st.floats(0.1, 5.0), min_size=2, max_size=8), st.floats(0.01, 1.0))
    def test_sum_property(self, mu, u):
        w = optimal_weights_gaussian(np.array(mu), 0.05, u)
        assert w.sum() == pytest.approx(len(mu), rel=1e-9)
        assert np.all(w >= 0)


class TestCorrections:
    def test_uniform_su(self):
        wm = correct_su(WeightMatrix.constant(np.ones(5), 0.05))
        assert np.allclose(wm.w[:, -1], 1 / 1.05)
        assert wm.corrected

    def test_uniform_sd(self):
        wm = correct_sd(WeightMatrix.constant(np.ones(4), 0.05))
        u = np.arange(1, 5) / 4
        assert np.allclose(wm.w, 1 / (1 + 0.05 * u))

    def test_zero_rows_stay_zero(self):
        wm = WeightMatrix.constant([0.0, 2.0, 1.0], 0.05)
        assert np.all(correct_su(wm).w[0] == 0)
        assert np.all(correct_sd(wm).w[0] == 0)

    def test_double_correction_rejected(self):
        wm = correct_su(WeightMatrix.constant(np.ones(2), 0.05))
        with pytest.raises(ValueError):
            correct_su(wm)

    def test_random_matrices(self, rng):
        for _ in range(30):
            wm = random_weight_matrix(10, 0.2, rng)
            su, sd = correct_su(wm), correct_sd(wm)
            assert np.all(sd.w >= su.w - 1e-15)
            assert np.all(su.w.sum(axis=0) < 10)


class TestUniformH1:
    def test_examples(self):
        assert np.allclose(uniform_h1_weights([0, 1, 1, 0]), [0, 2, 2, 0])
        assert np.allclose(uniform_h1_weights(np.ones(5)), 1.0)
        w = uniform_h1_weights([1] + [0] * 9)
        assert w[0] == 10 and w.sum() == 10

    def test_all_null_rejected(self):
        with pytest.raises(ValueError):
            uniform_h1_weights(np.zeros(3))


class TestLimitWeights:
    def test_constant_mean(self):
        lw = limit_weights_continuous_gaussian(lambda t: np.full_like(t, 2.0), 0.05, 0.3)
        assert np.allclose(lw(np.linspace(0.01, 1, 20)), 1.0, rtol=1e-9)
        assert lw.c == pytest.approx(2.0 * (norm_isf(0.015) - 1.0), rel=1e-9)

    def test_integral(self):
        lw = limit_weights_continuous_gaussian(lambda t: 5 * t, 0.05, 0.5)
        assert 0.05 * 0.5 * lw.integral() == pytest.approx(0.05 * 0.5, abs=1e-8)

    def test_finite_m_convergence(self):
        u = 0.25
        lw = limit_weights_continuous_gaussian(lambda t: 5 * t, 0.05, u, resolution=20_000)
        gaps = []
        for m in (100, 400, 1600):
            t = np.arange(1, m + 1) / m
            gaps.append(np.max(np.abs(optimal_weights_gaussian(5 * t, 0.05, u) - lw(t))))
        assert gaps[0] > gaps[1] > gaps[2]

    def test_rejects_nonpositive_means(self):
        with pytest.raises(ValueError):
            limit_weights_continuous_gaussian(lambda t: t - 0.5, 0.05, 0.5)


class TestWeightFunctions:
    def test_interpolation_hits_grid(self, rng):
        wm = random_weight_matrix(6, 0.1, rng)
        f = InterpolatedWeights(wm)
        for k in range(1, 7):
            assert np.allclose(f.thresholds_at(k / 6), wm.thresholds().at(k))
        mid = f.weights_at(0.5 / 6 + 2 / 6)
        assert mid.sum() == pytest.approx(6)

    def test_constant(self):
        f = ConstantWeights([0.5, 1.5], 0.2)
        assert np.allclose(f.thresholds_at(0.5), [0.05, 0.15])


class TestCsv:
    def test_round_trip(self, tmp_path, rng):
        wm = random_weight_matrix(7, 0.05, rng)
        path = tmp_path / "w.csv"
        write_weight_csv(path, wm)
        back = read_weight_csv(path, 0.05)
        assert np.allclose(back.w, wm.w, rtol=1e-9)

    def test_columns_and_normalize(self, tmp_path, rng):
        wm = random_weight_matrix(5, 0.05, rng)
        path = tmp_path / "w.csv"
        write_weight_csv(path, wm, normalize=True, columns=[1, 5])
        lines = path.read_text().splitlines()
        assert lines[0] == "hypothesis,k1,k5"
        vals = np.array([[float(x) for x in r.split(",")[1:]] for r in lines[1:]])
        assert np.allclose(vals.max(axis=0), 1.0)
        with pytest.raises(ValueError):
            write_weight_csv(path, wm, columns=[0])
