import csv
import math

import numpy as np
import pytest

from mwfdr.evaluation import (
    Procedure,
    band_procedures,
    epsilon_term,
    lsu_procedure,
    lsu_star_procedure,
    mc_evaluate,
    mc_fdr_power,
    monotone_gap_holds,
    oracle_inequality_bound,
    power_range,
    prop82_fdr_bounds,
    relative_power,
    step_down,
    step_up,
    thm41_fdr_bound,
    weighted_lsu_procedure,
    write_rows,
)
from mwfdr.models import HypothesisConfig, UnconditionalConfig
from mwfdr.weights import (
    ConstantWeights,
    OptimalGaussianWeights,
    WeightMatrix,
    correct_su,
    optimal_matrix_for,
    random_weight_matrix,
)


@pytest.fixture(scope="module")
def cond_model():
    return HypothesisConfig.from_means(np.r_[np.zeros(14), np.linspace(1, 3, 6)])


class TestProcedureHandles:
    def test_kind_validation(self):
        with pytest.raises(ValueError):
            Procedure("x", "maybe")
        with pytest.raises(ValueError):
            Procedure("x", "su")

    def test_reject_shapes(self):
        p = np.full((3, 4), 0.5)
        assert Procedure("n", "none").reject(p).sum() == 0
        assert Procedure("a", "all").reject(p).all()

    def test_constructors(self):
        p = np.array([[0.01, 0.02, 0.04, 0.2]])
        assert lsu_procedure(4, 0.05).reject(p).sum() == 2
        assert lsu_star_procedure(4, 0.05, 0.7).reject(p).sum() == 3
        assert weighted_lsu_procedure(np.ones(4), 0.05, "w").reject(p).sum() == 2
        wm = WeightMatrix.constant(np.ones(4), 0.05)
        assert step_up("u", wm).reject(p).sum() == 2
        assert step_down("d", wm).reject(p).sum() == 2


class TestMonteCarlo:
    def test_reject_none(self, cond_model):
        rep = mc_fdr_power(Procedure("none", "none"), cond_model, 500, 1)
        assert rep.fdr == 0 and rep.pow == 0

    def test_reject_all(self, cond_model):
        rep = mc_fdr_power(Procedure("all", "all"), cond_model, 500, 1)
        assert rep.fdr == pytest.approx(cond_model.pi0)
        assert rep.pow == pytest.approx(cond_model.pi1)
        assert rep.fdr_se == pytest.approx(0.0, abs=1e-8)

    def test_reject_all_unconditional(self):
        model = UnconditionalConfig(pi0=0.7, mu=np.full(30, 2.0))
        rep = mc_fdr_power(Procedure("all", "all"), model, 20_000, 2)
        assert abs(rep.pow - 0.3) < 4 * rep.pow_se

    def test_relpow_self_is_zero(self, cond_model):
        procs = [lsu_procedure(20, 0.05), lsu_procedure(20, 0.05, name="LSU-copy")]
        reps = mc_evaluate(procs, cond_model, 300, 3, baseline="LSU")
        assert reps["LSU-copy"].relpow == 0.0
        assert reps["LSU"].relpow_se == 0.0

    def test_relative_power_helper(self, cond_model):
        procs = [lsu_procedure(20, 0.05), lsu_star_procedure(20, 0.05, 0.7)]
        reps = mc_evaluate(procs, cond_model, 400, 4, baseline="LSU", keep_samples=True)
        rp, se = relative_power(reps["LSU*"], reps["LSU"], cond_model.m1)
        assert rp == pytest.approx(reps["LSU*"].relpow, abs=1e-12)
        assert se == pytest.approx(reps["LSU*"].relpow_se, rel=1e-9)
        assert rp >= 0

    def test_relative_power_needs_common_numbers(self, cond_model):
        a = mc_fdr_power(lsu_procedure(20, 0.05), cond_model, 50, 1, keep_samples=True)
        b = mc_fdr_power(lsu_procedure(20, 0.05), cond_model, 50, 2, keep_samples=True)
        with pytest.raises(ValueError):
            relative_power(a, b, cond_model.m1)
        c = mc_fdr_power(lsu_procedure(20, 0.05), cond_model, 50, 1)
        with pytest.raises(ValueError):
            relative_power(c, c, cond_model.m1)

    def test_reproducible(self, cond_model):
        procs = [lsu_procedure(20, 0.1)]
        a = mc_evaluate(procs, cond_model, 700, (5, 6))["LSU"]
        b = mc_evaluate(procs, cond_model, 700, (5, 6))["LSU"]
        assert a.row() == pytest.approx(b.row(), nan_ok=True)
        assert a.seed == (5, 6)

    def test_lsu_fdr_level(self):
        model = HypothesisConfig.from_means(np.r_[np.zeros(70), np.full(30, 2.5)])
        rep = mc_fdr_power(lsu_procedure(100, 0.05), model, 20_000, 11)
        assert abs(rep.fdr - 0.05 * 0.7) < 4 * rep.fdr_se

    def test_argument_checks(self, cond_model):
        with pytest.raises(ValueError):
            mc_evaluate([lsu_procedure(20, 0.05)] * 2, cond_model, 10, 0)
        with pytest.raises(ValueError):
            mc_evaluate([lsu_procedure(20, 0.05)], cond_model, 10, 0, baseline="nope")
        with pytest.raises(ValueError):
            mc_evaluate([lsu_procedure(20, 0.05)], cond_model, 0, 0)


class TestPowerBand:
    def test_band_names_and_grid(self, cond_model):
        procs = band_procedures(cond_model.mu, 0.05, cond_model, [0.25, 1.0])
        assert [p.name for p in procs] == ["band:5/20", "band:20/20"]
        with pytest.raises(ValueError):
            band_procedures(cond_model.mu, 0.05, cond_model, [0.33])

    def test_envelope(self, cond_model):
        band = power_range(cond_model.mu, 0.05, cond_model, [0.05, 0.5, 1.0], 400, 9)
        assert band.lower <= band.upper
        assert band.argmax in (0.05, 0.5, 1.0)
        assert band.upper_se >= 0


class TestTheorem41:
    def test_uniform_weights(self, cond_model):
        wm = WeightMatrix.constant(np.ones(20), 0.05)
        assert thm41_fdr_bound(wm, cond_model.h) == pytest.approx(0.05 * 0.7)

    def test_oracle_weights_give_zero(self, cond_model):
        wm = optimal_matrix_for(cond_model, 0.05)
        assert thm41_fdr_bound(wm, cond_model.h) == 0.0

    def test_checks(self, cond_model):
        wm = WeightMatrix.constant(np.ones(20), 0.05)
        with pytest.raises(ValueError):
            thm41_fdr_bound(correct_su(wm), cond_model.h)
        with pytest.raises(ValueError):
            thm41_fdr_bound(wm, cond_model.h[:5])

    def test_corrected_su_below_bound(self, rng):
        h = np.r_[np.zeros(10, int), np.ones(5, int)]
        model = HypothesisConfig(h=h, mu=np.r_[np.zeros(10), np.full(5, 2.0)])
        wm = random_weight_matrix(15, 0.1, rng, tilt=np.r_[np.full(10, 3.0), np.ones(5)])
        rep = mc_fdr_power(step_up("su", correct_su(wm)), model, 20_000, 12)
        assert rep.fdr <= thm41_fdr_bound(wm, h) + 3 * rep.fdr_se


class TestEpsilon:
    def test_value(self):
        assert epsilon_term(100, 0.2, 0.3) == pytest.approx(0.3 * 1e4 * math.exp(-200 * 0.19**2))
        assert epsilon_term(100, 0.2, 0.3) == pytest.approx(2.196, abs=1e-3)

    def test_below_one_over_m(self):
        assert epsilon_term(10, 0.05, 0.5) == pytest.approx(50.0)

    def test_bad_m(self):
        with pytest.raises(ValueError):
            epsilon_term(0, 0.1, 0.5)


class TestFiniteSampleBounds:
    @pytest.fixture(scope="class")
    @staticmethod
    def model():
        return UnconditionalConfig(pi0=0.7, mu=5 * np.arange(1, 201) / 200)

    def test_sandwich_and_ordering(self, model):
        rep = prop82_fdr_bounds(OptimalGaussianWeights(model.mu, 0.05), model, 0.02)
        assert rep.fdr_lower <= 0.05 * 0.7 <= rep.fdr_upper
        assert rep.u_bar > 0.02
        assert isinstance(rep.u_bar, float)
        assert rep.i_plus > 0 and rep.i_minus > 0
        assert rep.power_lower <= rep.power_anchor
        if rep.assumption_ok:
            assert rep.power_anchor <= rep.power_upper

    def test_small_ubar_branch(self, model):
        w = np.r_[np.full(100, 2.0), np.zeros(100)]
        rep = prop82_fdr_bounds(ConstantWeights(w, 0.05), model, 0.3)
        assert rep.u_bar <= 0.3
        assert math.isnan(rep.i_minus)
        # constant weights: sup = inf = 1 on average
        assert rep.fdr_upper - rep.fdr_lower == pytest.approx(
            2 * 0.05 * 0.7 * 200**3 * math.exp(-400 * max(rep.i_plus - 1 / 200, 0) ** 2), rel=1e-9)

    def test_lambda_precondition(self, model):
        with pytest.raises(ValueError):
            prop82_fdr_bounds(OptimalGaussianWeights(model.mu, 0.05), model, 0.99)
        with pytest.raises(ValueError):
            oracle_inequality_bound(model, 0.05, 0.7)

    def test_requires_unconditional(self, cond_model):
        with pytest.raises(TypeError):
            prop82_fdr_bounds(np.ones(20), cond_model, 0.02)

    def test_oracle_rhs(self, model):
        rep = oracle_inequality_bound(model, 0.05, 0.02)
        assert not math.isnan(rep.oracle_rhs)
        custom = oracle_inequality_bound(model, 0.05, 0.02, competitors={"u": np.ones(200)},
                                         competitor_powers={"u": 0.5})
        assert custom.oracle_rhs != rep.oracle_rhs

    def test_monotone_gap(self):
        assert monotone_gap_holds(lambda u: 0.5 * u, 0.0)
        assert not monotone_gap_holds(lambda u: u, 0.0)
        assert monotone_gap_holds(lambda u: u, 1.0)


class TestCsv:
    def test_write_rows(self, tmp_path, cond_model):
        rep = mc_fdr_power(lsu_procedure(20, 0.05), cond_model, 100, 1)
        path = tmp_path / "r.csv"
        write_rows(path, [rep.row()])
        rows = list(csv.DictReader(open(path)))
        assert rows[0]["procedure"] == "LSU"
        assert float(rows[0]["fdr"]) == pytest.approx(rep.fdr, rel=1e-9)
        with pytest.raises(ValueError):
            write_rows(path, [])
