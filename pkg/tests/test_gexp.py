"""
Tests for G-expectations, pasting, classification and the family norms
"""
import numpy as np
import pytest

from app.core.exceptions import EnumerationTooLargeError, NotInFamilyError, NotInSliceError
from app.models.family import MeasureFamily
from app.models.filtration import AdaptedProcess, FiltrationModel, Measure, StoppingTime
from app.schemas.generators import GeneratorSpec
from app.services.decomposition import decomposition_service
from app.services.filtration_core import filtration_service
from app.services.generators import generator_service
from app.services.gexp import g_expectation_service
from app.services.model_io import LoadedModel

ROWS = [[0.5, 0.5], [0.3, 0.7]]


@pytest.fixture
def model():
    return FiltrationModel.binomial(3)


@pytest.fixture
def family(model):
    return MeasureFamily.uniform_choices(model, ROWS)


@pytest.fixture
def xi(model, rng):
    values = np.zeros(model.node_count)
    values[model.leaves] = rng.normal(size=len(model.leaves))
    return AdaptedProcess(values, "xi")


@pytest.fixture
def g_zigzag():
    loaded = LoadedModel(generator_service.random_instance(GeneratorSpec(kind="g_zigzag", depth=3, seed=2)))
    return loaded.model, loaded.family(), loaded.process("Y")


class TestGExpectation:
    def test_two_point_choice_set(self):
        model = FiltrationModel.binomial(1)
        family = MeasureFamily.rectangular(model, {0: [[0.4, 0.6], [0.6, 0.4]]})
        xi = AdaptedProcess(np.array([0.0, 1.0, 0.0]))
        assert g_expectation_service.g_expectation(model, family, xi) == pytest.approx(0.6)

    def test_singleton_is_linear(self, binomial3, rng):
        xi = AdaptedProcess(rng.normal(size=binomial3.node_count))
        family = MeasureFamily.singleton(binomial3)
        assert g_expectation_service.g_expectation(binomial3, family, xi) == pytest.approx(
            filtration_service.expectation(binomial3, binomial3.reference_measure(), xi)
        )

    def test_dynamic_programming_matches_all_selections(self, model, family, xi):
        brute = max(filtration_service.expectation(model, m, xi) for m in family.iter_selections())
        assert family.selection_count() == 128
        assert g_expectation_service.g_expectation(model, family, xi) == pytest.approx(brute, abs=1e-12)

    def test_conditional_at_the_ends(self, model, family, xi):
        base = family.selection_measure({}, "base")
        root = g_expectation_service.conditional_g_expectation(
            model, family, xi, StoppingTime.initial(model), base
        )
        np.testing.assert_allclose(root.values, g_expectation_service.g_expectation(model, family, xi))
        last = g_expectation_service.conditional_g_expectation(
            model, family, xi, StoppingTime.terminal(model), base
        )
        np.testing.assert_allclose(last.values[model.leaves], xi.values[model.leaves])

    def test_base_must_belong_to_the_family(self, model, family, xi):
        outside = FiltrationModel.binomial(3, 0.9).reference_measure()
        with pytest.raises(NotInFamilyError):
            g_expectation_service.conditional_g_expectation(model, family, xi, StoppingTime.initial(model), outside)

    def test_tower_property(self, model, family, xi):
        tower = g_expectation_service.dpp_tower(
            model, family, xi,
            StoppingTime.constant(model, 1), StoppingTime.constant(model, 2),
            family.selection_measure({}, "base"),
        )
        assert len(tower.nodes) == 2
        assert tower.gap <= 1e-12

    def test_tower_at_random_times(self, model, family, xi):
        first = StoppingTime.first_hitting(model, np.isin(np.arange(model.node_count), [1, 5, 6]))
        assert first.to_ids() == ["0.0", "0.1.0", "0.1.1"]
        second = StoppingTime.first_hitting(model, model.time == 3, after=first, strict=False)
        tower = g_expectation_service.dpp_tower(model, family, xi, first, second, family.selection_measure({1: 1}))
        assert tower.gap <= 1e-12

    def test_explicit_family_is_a_max_over_members(self, binomial3, xi):
        first = binomial3.reference_measure()
        second = FiltrationModel.binomial(3, 0.6).reference_measure()
        family = MeasureFamily.explicit(binomial3, [first, second])
        expected = max(filtration_service.expectation(binomial3, m, xi) for m in (first, second))
        assert g_expectation_service.g_expectation(binomial3, family, xi) == pytest.approx(expected)

    def test_selection_cap(self, family):
        with pytest.raises(EnumerationTooLargeError):
            family.extreme_measures(cap=4)


class TestPasting:
    def test_paste_with_itself(self, model, family):
        P1 = family.selection_measure({3: 1})
        pasted = g_expectation_service.paste(model, P1, P1, StoppingTime.constant(model, 1), [1])
        np.testing.assert_array_equal(pasted.prob, P1.prob)

    def test_paste_switches_below_the_event(self, model, family):
        P1 = family.selection_measure({})
        P2 = family.selection_measure({1: 1, 2: 1, 4: 1})
        pasted = g_expectation_service.paste(model, P1, P2, StoppingTime.constant(model, 1), [1])
        for v in (1, 3, 4):
            kids = list(model.children[v])
            np.testing.assert_array_equal(pasted.prob[kids], P1.prob[kids])
        for v in (2, 5, 6):
            kids = list(model.children[v])
            np.testing.assert_array_equal(pasted.prob[kids], P2.prob[kids])

    def test_measures_must_agree_before_the_cut(self, model, family):
        P1 = family.selection_measure({})
        P2 = family.selection_measure({0: 1})
        with pytest.raises(NotInSliceError) as err:
            g_expectation_service.paste(model, P1, P2, StoppingTime.constant(model, 1), [1])
        assert err.value.node == "0.0"

    def test_event_must_be_on_the_cut(self, model, family):
        P1 = family.selection_measure({})
        with pytest.raises(ValueError):
            g_expectation_service.paste(model, P1, P1, StoppingTime.constant(model, 1), [0])

    def test_pasting_attains_the_pointwise_maximum(self, model, family, xi):
        P1 = family.selection_measure({})
        P2 = family.selection_measure({v: 1 for v in range(1, 7)})
        pasted, gap = g_expectation_service.pasting_maximum(model, P1, P2, xi, StoppingTime.constant(model, 1))
        assert gap <= 1e-12
        assert family.contains(pasted)


class TestClassify:
    def test_g_martingale(self, model, family, xi):
        Y = AdaptedProcess(g_expectation_service.g_running(model, family, xi), "Y")
        flags = g_expectation_service.classify(model, family, Y).flags
        assert flags["G-martingale"] and flags["G-super"] and flags["G-sub"]
        assert flags["P-super"]

    def test_deterministic_increasing(self, model, family):
        Y = AdaptedProcess.from_levels(model, [0.0, 1.0, 2.0, 3.0])
        result = g_expectation_service.classify(model, family, Y)
        assert result.flags["P-sub"] and result.flags["G-sub"]
        assert not result.flags["P-super"]
        assert result.witnesses["P-super"].gap == pytest.approx(1.0)

    def test_g_zigzag_is_a_g_submartingale_only(self, g_zigzag):
        model, family, Y = g_zigzag
        result = g_expectation_service.classify(model, family, Y)
        assert result.flags["G-sub"]
        assert not result.flags["G-martingale"]
        assert not result.flags["P-super"]
        assert not result.flags["P-sub"]
        assert result.implication_violations() == []

    def test_explicit_singleton_martingale(self, binomial3, xi):
        P = binomial3.reference_measure()
        M = AdaptedProcess(filtration_service.running_expectation(binomial3, P, xi, StoppingTime.terminal(binomial3)))
        flags = g_expectation_service.classify(binomial3, MeasureFamily.singleton(binomial3), M).flags
        assert all(flags.values())

    def test_negated_zigzag_increments_are_a_g_martingale(self, g_zigzag):
        model, family, _ = g_zigzag
        K = generator_service.g_zigzag_increments(model, family, 0.5)
        assert g_expectation_service.classify(model, family, -K).flags["G-martingale"]


class TestFamilyNorms:
    def test_singleton_cp_norm_is_the_partition_norm(self, binomial3, rng):
        Y = AdaptedProcess(rng.uniform(-1, 1, binomial3.node_count))
        report = g_expectation_service.norm_cp(binomial3, MeasureFamily.singleton(binomial3), Y)
        assert report.value_sq == pytest.approx(
            decomposition_service.norm_p(binomial3, binomial3.reference_measure(), Y).norm_p_sq
        )

    def test_cp_norm_takes_the_largest_member(self, binomial3, rng):
        Y = AdaptedProcess(rng.uniform(-1, 1, binomial3.node_count))
        members = [binomial3.reference_measure(), Measure(FiltrationModel.binomial(3, 0.8).ref_prob, "Q")]
        report = g_expectation_service.norm_cp(binomial3, MeasureFamily.explicit(binomial3, members), Y)
        assert report.value_sq == pytest.approx(
            max(decomposition_service.norm_p(binomial3, m, Y).norm_p_sq for m in members)
        )

    def test_singleton_g_norm_is_the_partition_norm(self, binomial3, rng):
        Y = AdaptedProcess(rng.uniform(-1, 1, binomial3.node_count))
        P = binomial3.reference_measure()
        for strategy in ("finest", "enumerate"):
            report = g_expectation_service.norm_g(binomial3, MeasureFamily.singleton(binomial3), Y, strategy)
            assert report.value_sq == pytest.approx(decomposition_service.norm_p(binomial3, P, Y, strategy).norm_p_sq)

    def test_g_martingale_has_only_the_sup_term(self, model, family, xi):
        Y = AdaptedProcess(g_expectation_service.g_running(model, family, xi))
        report = g_expectation_service.norm_g(model, family, Y, "enumerate")
        sup_sq = g_expectation_service.g_leaf(model, family, decomposition_service.running_sup_sq(model, Y))
        assert report.value_sq == pytest.approx(sup_sq, abs=1e-12)

    def test_cp_dominates_the_sup_term(self, model, family, xi):
        Y = AdaptedProcess(g_expectation_service.g_running(model, family, xi))
        sup_sq = g_expectation_service.g_leaf(model, family, decomposition_service.running_sup_sq(model, Y))
        assert g_expectation_service.norm_cp(model, family, Y).value_sq >= sup_sq - 1e-12

    def test_triangle_holds_for_a_single_measure(self, binomial3, rng):
        family = MeasureFamily.singleton(binomial3)
        Y1 = AdaptedProcess(rng.uniform(-1, 1, binomial3.node_count))
        Y2 = AdaptedProcess(rng.uniform(-1, 1, binomial3.node_count))
        assert g_expectation_service.triangle_defect(binomial3, family, Y1, Y2, "enumerate") <= 1e-12


class TestFamilyDecomposition:
    def test_deterministic_increasing(self, binomial3):
        Y = AdaptedProcess.from_levels(binomial3, [0.0, 1.0, 3.0, 4.0])
        report = g_expectation_service.decomposition_family(binomial3, MeasureFamily.singleton(binomial3), Y)
        assert report.is_g_submartingale
        (dec,) = report.decompositions
        assert all(v == 0.0 for v in dec.decreasing_part.values())
        assert dec.increasing_part == pytest.approx(Y.to_mapping(binomial3))
        assert [p.outcome for p in report.doob_meyer] == ["holds"]

    def test_martingale_has_no_finite_variation(self, binomial3, xi):
        P = binomial3.reference_measure()
        M = AdaptedProcess(filtration_service.running_expectation(binomial3, P, xi, StoppingTime.terminal(binomial3)))
        report = g_expectation_service.decomposition_family(binomial3, MeasureFamily.singleton(binomial3), M)
        (dec,) = report.decompositions
        assert max(abs(v) for v in dec.increasing_part.values()) < 1e-12
        assert max(abs(v) for v in dec.decreasing_part.values()) < 1e-12

    def test_g_zigzag_doob_meyer_check(self, g_zigzag):
        model, family, Y = g_zigzag
        report = g_expectation_service.decomposition_family(model, family, Y)
        assert report.is_g_submartingale
        assert len(report.decompositions) == family.selection_count()
        assert len(report.doob_meyer) == len(report.decompositions)
        assert {p.outcome for p in report.doob_meyer} <= {"holds", "fails", "ambiguous"}

    def test_non_submartingale_skips_the_doob_meyer_check(self, model, family):
        Y = AdaptedProcess.from_levels(model, [3.0, 2.0, 1.0, 0.0])
        report = g_expectation_service.decomposition_family(model, family, Y)
        assert not report.is_g_submartingale
        assert report.doob_meyer == []
