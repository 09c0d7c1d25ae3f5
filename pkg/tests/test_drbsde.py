"""
Tests for the doubly reflected backward solver, the barrier norm and the
estimates built on them
"""
import numpy as np
import pytest

from app.core.exceptions import (
    BarriersCrossedError, DriverDivergedError, DriverLipschitzError, TerminalOutsideBarriersError,
)
from app.models.drbsde import DrbsdeInstance, LinearDriver, ZeroDriver
from app.models.filtration import AdaptedProcess, FiltrationModel, StoppingTime
from app.schemas.generators import GeneratorSpec
from app.schemas.model import ModelDocument
from app.services.decomposition import decomposition_service
from app.services.drbsde import drbsde_service
from app.services.filtration_core import filtration_service
from app.services.generators import generator_service
from app.services.model_io import LoadedModel
from tests.conftest import path_oracle

WIDE = 1e9


def terminal_at_leaves(model, leaf_values):
    values = np.zeros(model.node_count)
    values[model.leaves] = leaf_values
    return AdaptedProcess(values, "xi")


def unconstrained(model, xi, driver=ZeroDriver(), dt=1.0):
    return DrbsdeInstance(
        model, xi,
        AdaptedProcess.constant(model, -WIDE), AdaptedProcess.constant(model, WIDE),
        driver, dt,
    )


def one_step_instance(driver, leaf_values=(1.0, 0.0)):
    model = FiltrationModel.binomial(1)
    return model, unconstrained(model, terminal_at_leaves(model, leaf_values), driver)


@pytest.fixture
def barriers_instance():
    loaded = LoadedModel(generator_service.random_instance(GeneratorSpec(kind="random_barriers", depth=3, seed=11)))
    return loaded.model, loaded.measure(), loaded.instance("main")


@pytest.fixture
def equal_barriers():
    model, L, U = generator_service.equal_barriers_counterexample(4)
    xi = AdaptedProcess(np.where(model.is_leaf, L.values, 0.0))
    return model, DrbsdeInstance(model, xi, L, U)


class TestSolve:
    def test_unconstrained_is_the_conditional_expectation(self, binomial3, rng):
        P = binomial3.reference_measure()
        leaf_values = rng.normal(size=len(binomial3.leaves))
        solution = drbsde_service.solve(binomial3, P, unconstrained(binomial3, terminal_at_leaves(binomial3, leaf_values)))
        expected = [path_oracle(binomial3, P, leaf_values, v) for v in range(binomial3.node_count)]
        np.testing.assert_allclose(solution.Y.values, expected, atol=1e-12)
        np.testing.assert_allclose(solution.K_plus.values, 0.0)
        np.testing.assert_allclose(solution.K_minus.values, 0.0)
        assert solution.scheme == "explicit"

    def test_equal_barriers_pin_the_solution(self, binomial3, rng):
        P = binomial3.reference_measure()
        S = AdaptedProcess(rng.uniform(-1, 1, binomial3.node_count), "S")
        xi = AdaptedProcess(np.where(binomial3.is_leaf, S.values, 0.0))
        solution = drbsde_service.solve(binomial3, P, DrbsdeInstance(binomial3, xi, S, S))
        np.testing.assert_allclose(solution.Y.values, S.values, atol=1e-12)
        # the reflection cancels the drift of S
        dec = decomposition_service.doob_decompose(binomial3, P, S)
        np.testing.assert_allclose(solution.A.values, -dec.A.values, atol=1e-12)

    def test_reflections_are_orthogonal(self, barriers_instance):
        model, P, instance = barriers_instance
        solution = drbsde_service.solve(model, P, instance)
        L, U, Y = instance.lower.values, instance.upper.values, solution.Y.values
        assert np.all(L - 1e-12 <= Y) and np.all(Y <= U + 1e-12)
        up, down = solution.push_up, solution.push_down
        assert np.all(up >= 0) and np.all(down >= 0)
        np.testing.assert_allclose(up * (Y - L), 0.0, atol=1e-10)
        np.testing.assert_allclose(down * (U - Y), 0.0, atol=1e-10)

    def test_penalization_converges_to_reflection(self, barriers_instance):
        model, P, instance = barriers_instance
        reflected = drbsde_service.solve(model, P, instance)
        penalized = drbsde_service.solve_penalized(model, P, instance)
        assert np.max(np.abs(reflected.Y.values - penalized.Y.values)) <= 1e-3
        assert penalized.scheme == "penalized"

    def test_equal_barrier_variation_grows_with_depth(self, equal_barriers):
        model, instance = equal_barriers
        solution = drbsde_service.solve(model, model.reference_measure(), instance)
        np.testing.assert_allclose(solution.Y.values, instance.lower.values)
        assert solution.leaf_variation().max() == pytest.approx(4.0)

    def test_non_binary_model_uses_surrogate(self):
        model = FiltrationModel.uniform_tree(2, 3)
        xi = terminal_at_leaves(model, np.arange(len(model.leaves), dtype=float))
        solution = drbsde_service.solve(model, model.reference_measure(), unconstrained(model, xi))
        assert solution.z_surrogate
        assert np.all(solution.Z.values >= 0)


class TestSchemes:
    def test_explicit_step(self):
        model, instance = one_step_instance(LinearDriver(a=0.6))
        solution = drbsde_service.solve(model, model.reference_measure(), instance, "explicit")
        assert solution.Y.values[0] == pytest.approx(0.8)

    def test_picard_chosen_for_large_lipschitz(self):
        model, instance = one_step_instance(LinearDriver(a=0.6))
        solution = drbsde_service.solve(model, model.reference_measure(), instance)
        assert solution.scheme == "picard"
        assert solution.Y.values[0] == pytest.approx(1.25, abs=1e-10)

    def test_picard_divergence(self):
        model, instance = one_step_instance(LinearDriver(a=2.0))
        with pytest.raises(DriverDivergedError) as err:
            drbsde_service.solve(model, model.reference_measure(), instance, "picard")
        assert err.value.node == "0"

    def test_unknown_scheme(self):
        model, instance = one_step_instance(ZeroDriver())
        with pytest.raises(ValueError):
            drbsde_service.solve(model, model.reference_measure(), instance, "implicit-euler")


class TestBackwardEquation:
    """Y_v = E_v Y + f(v, ., Z_v) dt + dK+_v - dK-_v at every internal node"""

    @staticmethod
    def with_driver(seed, driver, dt):
        main = LoadedModel(generator_service.random_instance(
            GeneratorSpec(kind="random_barriers", depth=4, seed=seed)
        )).instance("main")
        return main.model, DrbsdeInstance(main.model, main.terminal, main.lower, main.upper, driver, dt)

    @staticmethod
    def child_mean(model, P, Y, v):
        return sum(P.prob[c] * Y[c] for c in model.children[v])

    @pytest.mark.parametrize("seed", range(5))
    def test_explicit_step_holds_at_every_node(self, seed):
        driver = LinearDriver(0.3, 0.2, 0.1)
        model, instance = self.with_driver(seed, driver, 0.5)
        P = model.reference_measure()
        solution = drbsde_service.solve(model, P, instance, "explicit")
        Y, Z = solution.Y.values, solution.Z.values
        up, down = solution.push_up, solution.push_down
        for v in np.flatnonzero(~model.is_leaf):
            mean = self.child_mean(model, P, Y, v)
            step = driver(np.array([v]), np.array([mean]), np.array([Z[v]]))[0] * 0.5
            assert Y[v] == pytest.approx(mean + step + up[v] - down[v], abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_picard_fixed_point_holds_at_every_node(self, seed):
        driver = LinearDriver(0.6, 0.1, 0.05)
        model, instance = self.with_driver(seed, driver, 1.0)
        P = model.reference_measure()
        solution = drbsde_service.solve(model, P, instance, "picard")
        Y, Z = solution.Y.values, solution.Z.values
        y_tilde = Y - solution.push_up + solution.push_down
        for v in np.flatnonzero(~model.is_leaf):
            mean = self.child_mean(model, P, Y, v)
            step = driver(np.array([v]), np.array([y_tilde[v]]), np.array([Z[v]]))[0]
            assert y_tilde[v] == pytest.approx(mean + step, abs=1e-10)

    @pytest.mark.parametrize("seed", range(3))
    def test_terminal_condition_and_barriers(self, seed):
        model, instance = self.with_driver(seed, LinearDriver(0.3, 0.2, 0.1), 0.5)
        solution = drbsde_service.solve(model, model.reference_measure(), instance)
        leaves = model.leaves
        np.testing.assert_array_equal(solution.Y.values[leaves], instance.terminal.values[leaves])
        assert np.all(solution.Y.values >= instance.lower.values - 1e-12)
        assert np.all(solution.Y.values <= instance.upper.values + 1e-12)
        assert np.all(solution.push_up * solution.push_down == 0.0)


class TestInstanceValidation:
    def test_crossed_barriers(self, binomial3):
        xi = AdaptedProcess.constant(binomial3, 0.0)
        L = AdaptedProcess.from_levels(binomial3, [0.0, 1.0, -1.0, -1.0])
        U = AdaptedProcess.constant(binomial3, 0.5)
        with pytest.raises(BarriersCrossedError) as err:
            drbsde_service.solve(binomial3, binomial3.reference_measure(), DrbsdeInstance(binomial3, xi, L, U))
        assert err.value.node == "0.0"

    def test_terminal_outside_barriers(self, binomial3):
        xi = AdaptedProcess.constant(binomial3, 2.0)
        L, U = AdaptedProcess.constant(binomial3, -1.0), AdaptedProcess.constant(binomial3, 1.0)
        with pytest.raises(TerminalOutsideBarriersError):
            drbsde_service.solve(binomial3, binomial3.reference_measure(), DrbsdeInstance(binomial3, xi, L, U))

    def test_dt_must_be_positive(self, binomial3):
        zero = AdaptedProcess.constant(binomial3, 0.0)
        with pytest.raises(ValueError):
            DrbsdeInstance(binomial3, zero, zero, zero, dt=0.0)

    def test_driver_breaking_its_lipschitz_constant(self, binomial3):
        xi = AdaptedProcess.constant(binomial3, 0.0)
        instance = unconstrained(binomial3, xi, LinearDriver(a=2.0, lipschitz=0.5))
        with pytest.raises(DriverLipschitzError) as err:
            drbsde_service.solve(binomial3, binomial3.reference_measure(), instance)
        assert err.value.lipschitz == 0.5

    def test_declared_lipschitz_in_a_document_is_checked(self):
        doc = generator_service.random_instance(GeneratorSpec(kind="random_barriers", depth=3, seed=4))
        data = doc.model_dump()
        data["instances"]["main"]["driver"].update(a=0.4, lipschitz=1e-3)
        with pytest.raises(DriverLipschitzError):
            LoadedModel(ModelDocument.model_validate(data)).instance("main").validate()

    @pytest.mark.parametrize("driver", [ZeroDriver(), LinearDriver(0.3, -0.2, 0.1), LinearDriver(-1.5, 0.0)])
    def test_honest_drivers_pass_the_spot_check(self, binomial3, rng, driver):
        assert driver.check_lipschitz(binomial3, rng)


class TestBarrierNorm:
    def test_barriers_straddling_zero(self, binomial3):
        L, U = AdaptedProcess.constant(binomial3, -1.0), AdaptedProcess.constant(binomial3, 2.0)
        assert drbsde_service.barrier_norm(binomial3, binomial3.reference_measure(), L, U) == 0.0

    def test_equal_alternating_barriers(self, equal_barriers):
        model, instance = equal_barriers
        P = model.reference_measure()
        for strategy in ("finest", "enumerate"):
            result = drbsde_service.barrier_partition(model, P, instance.lower, instance.upper, strategy)
            assert result.value == pytest.approx(16.0)
        assert drbsde_service.barrier_norm(model, P, instance.lower, instance.upper) == pytest.approx(17.0)

    def test_one_barrier_reduces_to_the_sup_norm(self, barriers_instance):
        model, P, instance = barriers_instance
        U = AdaptedProcess.constant(model, WIDE)
        lower_part = AdaptedProcess(np.maximum(instance.lower.values, 0.0))
        assert drbsde_service.barrier_norm(model, P, instance.lower, U) == pytest.approx(
            decomposition_service.norm_p0(model, P, lower_part), rel=1e-8
        )

    def test_widening_the_upper_barrier_never_increases_it(self, barriers_instance):
        model, P, instance = barriers_instance
        narrow = drbsde_service.barrier_norm(model, P, instance.lower, instance.upper)
        wide = drbsde_service.barrier_norm(model, P, instance.lower, instance.upper + 0.5)
        assert wide <= narrow + 1e-12

    def test_crossed_barriers(self, binomial3):
        L, U = AdaptedProcess.constant(binomial3, 1.0), AdaptedProcess.constant(binomial3, 0.0)
        with pytest.raises(BarriersCrossedError):
            drbsde_service.barrier_norm(binomial3, binomial3.reference_measure(), L, U)


class TestNorms:
    @pytest.mark.parametrize("value, expected", [(0.0, 0.0), (1.0, 1.0)])
    def test_i0_of_constant_terminal(self, binomial3, value, expected):
        xi = AdaptedProcess.constant(binomial3, value)
        assert drbsde_service.i0(binomial3, binomial3.reference_measure(), xi) == pytest.approx(expected)

    def test_i0_counts_the_driver_at_zero(self, binomial3, rng):
        P = binomial3.reference_measure()
        leaf_values = rng.normal(size=len(binomial3.leaves))
        xi = terminal_at_leaves(binomial3, leaf_values)
        value = drbsde_service.i0(binomial3, P, xi, LinearDriver(c=0.2), dt=0.5)
        assert value == pytest.approx(path_oracle(binomial3, P, leaf_values ** 2, 0) + 0.09)

    def test_zero_solution(self, binomial3):
        zero = AdaptedProcess.constant(binomial3, 0.0)
        instance = DrbsdeInstance(
            binomial3, zero, AdaptedProcess.constant(binomial3, -1.0), AdaptedProcess.constant(binomial3, 1.0)
        )
        solution = drbsde_service.solve(binomial3, binomial3.reference_measure(), instance)
        assert drbsde_service.solution_norm(binomial3, binomial3.reference_measure(), solution) == 0.0

    def test_equal_barrier_norm_scales_with_depth_squared(self):
        for depth in (4, 8, 16):
            model, L, U = generator_service.equal_barriers_counterexample(depth)
            xi = AdaptedProcess(np.where(model.is_leaf, L.values, 0.0))
            P = model.reference_measure()
            solution = drbsde_service.solve(model, P, DrbsdeInstance(model, xi, L, U))
            assert 0.5 <= drbsde_service.solution_norm(model, P, solution) / depth ** 2 <= 2.0


class TestProofDevices:
    def test_excursions_without_reflection(self, binomial3):
        zero = AdaptedProcess.constant(binomial3, 0.0)
        times = drbsde_service.excursion_times(binomial3, zero, zero)
        terminal = StoppingTime.terminal(binomial3)
        assert times[0] == StoppingTime.initial(binomial3)
        assert times[1:] == [terminal, terminal]

    def test_excursions_alternate(self):
        model = FiltrationModel.chain(6)
        K_plus = AdaptedProcess.from_levels(model, [0, 0, 1, 1, 1, 1, 1])
        K_minus = AdaptedProcess.from_levels(model, [0, 0, 0, 0, 0, 1, 1])
        times = drbsde_service.excursion_times(model, K_plus, K_minus)
        assert [int(model.time[t.nodes[0]]) for t in times] == [0, 2, 5, 6, 6]

    def test_witness_of_equal_barriers(self, binomial3, rng):
        S = AdaptedProcess(rng.uniform(-1, 1, binomial3.node_count))
        witness = drbsde_service.mokobodski_witness(binomial3, binomial3.reference_measure(), S, S)
        np.testing.assert_allclose(witness.values, S.values, atol=1e-12)

    def test_witness_between_zero_straddling_barriers(self, binomial3):
        L, U = AdaptedProcess.constant(binomial3, -1.0), AdaptedProcess.constant(binomial3, 1.0)
        witness = drbsde_service.mokobodski_witness(binomial3, binomial3.reference_measure(), L, U)
        np.testing.assert_allclose(witness.values, 0.0)

    def test_separation(self, binomial3):
        L = AdaptedProcess.constant(binomial3, 0.0)
        assert drbsde_service.check_separation(binomial3, L, L + 1.0) == []
        assert drbsde_service.check_separation(binomial3, L, L) == list(binomial3.ids)

    def test_sandwich_holds_for_the_witness(self):
        loaded = LoadedModel(generator_service.random_instance(GeneratorSpec(kind="random_barriers", depth=2, seed=5)))
        model, P, instance = loaded.model, loaded.measure(), loaded.instance("main")
        S = drbsde_service.mokobodski_witness(model, P, instance.lower, instance.upper)
        for partition in filtration_service.enumerate_stopping_partitions(model, 3):
            assert drbsde_service.sandwich_gap(model, P, instance.lower, instance.upper, S, partition) <= 1e-12

    def test_jump_bound_on_equal_barriers(self, equal_barriers):
        model, instance = equal_barriers
        solution = drbsde_service.solve(model, model.reference_measure(), instance)
        report = drbsde_service.jump_bound_report(model, solution, instance.lower, instance.upper)
        assert report.holds
        assert report.violating_leaves == []


class TestEstimates:
    def test_estimate_report_is_consistent(self, barriers_instance):
        model, P, instance = barriers_instance
        report = drbsde_service.estimate_report(model, P, instance)
        solution = drbsde_service.solve(model, P, instance)
        assert report.solution_norm_sq == pytest.approx(drbsde_service.solution_norm(model, P, solution))
        assert report.ratio == pytest.approx(report.solution_norm_sq / (report.i0_sq + report.barrier_norm_sq))
        assert tuple(report.window) == (0.0, 100.0)

    def test_difference_of_identical_instances(self, barriers_instance):
        model, P, instance = barriers_instance
        solution = drbsde_service.solve(model, P, instance)
        report = drbsde_service.difference_report(model, P, instance, instance, solution, solution)
        assert report.lhs == 0.0
        assert report.ratio == 0.0

    def test_terminal_perturbation_has_no_barrier_term(self, barriers_instance):
        model, P, instance = barriers_instance
        L, U = instance.lower.values, instance.upper.values
        nudged = np.where(model.is_leaf, (L + U) / 2.0, instance.terminal.values)
        other = instance.with_terminal(AdaptedProcess(nudged))
        report = drbsde_service.difference_report(
            model, P, instance, other,
            drbsde_service.solve(model, P, instance), drbsde_service.solve(model, P, other),
        )
        assert report.barrier_term == 0.0
        assert report.driver_term > 0.0

    def test_upper_shift_decays_at_rate_one(self):
        model = FiltrationModel.binomial(1)
        xi = terminal_at_leaves(model, [2.0, 0.0])
        L = AdaptedProcess.constant(model, -10.0)
        U = AdaptedProcess(np.array([0.5, 10.0, 10.0]))
        report = drbsde_service.barrier_shift_sensitivity(
            model, model.reference_measure(), DrbsdeInstance(model, xi, L, U)
        )
        assert [p.shift for p in report.points] == [0.5, 0.25, 0.125, 0.0625]
        for point in report.points:
            assert point.report.lhs == pytest.approx(point.shift ** 2)
        assert report.decay_rate == pytest.approx(1.0)
