import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvregister.crosstalk import (
    DEFAULT_GAMMA_MHZ,
    DEFAULT_MSR_DURATION_US,
    CrosstalkBreakdown,
    EmitterOpticalModel,
    OpticalTransition,
    ReadoutPulse,
    calibrate_rabi,
    emitter_crosstalk,
    min_safe_detuning,
    transition_crosstalk,
)
from nvregister.errors import DegenerateInputError, DomainError, UnsolvableError
from nvregister.units import ghz_to_angular_mhz

# Frozen with 50-digit arithmetic (mpmath) before the implementation:
# probability at omega=gamma, delta=10*gamma, gamma=2*pi*13.3 rad/us, T=3.7 us.
GOLDEN_PROBABILITY = 0.78360958684363046644

# Frozen via 400-step bisection of the closed form (mpmath, independent of
# the inversion formula): omega reproducing probability 0.01 at 16 GHz with
# gamma = 1/(12 ns), T = 0.6 us.
GOLDEN_CALIBRATED_OMEGA = 2016.0785443844449272


def _single_emitter(freq_ghz=470_400.0, rabi=100.0, branching=None, ground=0, excited="Ex"):
    return EmitterOpticalModel(
        label="D",
        transitions=(
            OpticalTransition(
                ground=ground,
                excited=excited,
                frequency_ghz=freq_ghz,
                rabi_mhz=rabi,
                branching_mhz=branching or {0: DEFAULT_GAMMA_MHZ},
            ),
        ),
    )


class TestTransitionCrosstalk:
    def test_golden_value(self):
        gamma = 2 * math.pi * 13.3
        value = transition_crosstalk(gamma, 10 * gamma, gamma, 3.7)
        assert value == pytest.approx(GOLDEN_PROBABILITY, rel=1e-14)

    def test_on_resonance_independent_of_omega(self):
        gamma, duration = 80.0, 0.5
        expected = -math.expm1(-gamma * duration / 2.0)
        for omega in (1e-6, 1.0, 1e3, 1e9):
            assert transition_crosstalk(omega, 0.0, gamma, duration) == pytest.approx(
                expected, rel=1e-12
            )

    def test_zero_duration(self):
        assert transition_crosstalk(50.0, 123.0, 80.0, 0.0) == 0.0

    def test_zero_omega_is_zero(self):
        assert transition_crosstalk(0.0, 0.0, 80.0, 1.0) == 0.0
        assert transition_crosstalk(0.0, 5.0, 80.0, 1.0) == 0.0

    def test_rejects_negative_arguments(self):
        with pytest.raises(DomainError):
            transition_crosstalk(-1.0, 0.0, 1.0, 1.0)
        with pytest.raises(DomainError):
            transition_crosstalk(1.0, 0.0, -1.0, 1.0)
        with pytest.raises(DomainError):
            transition_crosstalk(1.0, 0.0, 1.0, -1.0)

    def test_exact_evenness(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            omega, gamma, duration = rng.uniform(0.1, 1e3, 3)
            delta = rng.uniform(-1e5, 1e5)
            assert transition_crosstalk(omega, delta, gamma, duration) == transition_crosstalk(
                omega, -delta, gamma, duration
            )

    def test_monotonicity_random_tuples(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            omega = rng.uniform(0.1, 500.0)
            gamma = rng.uniform(0.1, 200.0)
            duration = rng.uniform(0.01, 5.0)
            d1, d2 = np.sort(rng.uniform(0.0, 1e4, 2))
            g_near = transition_crosstalk(omega, d1, gamma, duration)
            g_far = transition_crosstalk(omega, d2, gamma, duration)
            assert g_far <= g_near + 1e-15
            assert transition_crosstalk(omega, d1, gamma, duration * 1.5) >= g_near
            assert transition_crosstalk(omega * 1.5, d1, gamma, duration) >= g_near
            assert 0.0 <= g_near <= 1.0

    def test_far_detuned_limit(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            omega = rng.uniform(0.1, 1e3)
            gamma = rng.uniform(0.1, 100.0)
            duration = rng.uniform(0.01, 10.0 / gamma)
            assert transition_crosstalk(omega, 1e6 * omega, gamma, duration) < 1e-6

    def test_vectorized_delta(self):
        deltas = np.array([-8.0, 0.0, 8.0])
        out = transition_crosstalk(10.0, deltas, 80.0, 1.0)
        assert out.shape == deltas.shape
        assert out[0] == out[2]
        assert out[1] == pytest.approx(-math.expm1(-40.0))


class TestEmitterCrosstalk:
    def test_single_transition_on_resonance(self):
        model = _single_emitter()
        pulse = ReadoutPulse(470_400.0, DEFAULT_MSR_DURATION_US)
        breakdown = emitter_crosstalk(model, pulse, {0: 1.0})
        expected = -math.expm1(-DEFAULT_GAMMA_MHZ * DEFAULT_MSR_DURATION_US / 2.0)
        assert breakdown.total == pytest.approx(expected, rel=1e-12)
        assert breakdown.dominant == (0, "Ex", 0)

    def test_unpopulated_ground_state_contributes_nothing(self):
        model = _single_emitter(ground=0)
        pulse = ReadoutPulse(470_400.0, 1.0)
        breakdown = emitter_crosstalk(model, pulse, {0: 0.0, 1: 1.0})
        assert breakdown.total == 0.0
        assert breakdown.per_transition == {}
        assert breakdown.dominant is None

    def test_two_transitions_brute_force_sum(self):
        # Mirror transitions at +/- 3 GHz around the laser; oracle sums the
        # single-transition values directly.
        freq = 470_400.0
        rabi, gamma, duration = 60.0, 40.0, 0.8
        model = EmitterOpticalModel(
            label="D",
            transitions=(
                OpticalTransition(0, "Ex", freq + 3.0, rabi, {0: gamma}),
                OpticalTransition(1, "E1", freq - 3.0, rabi, {1: gamma}),
            ),
        )
        pulse = ReadoutPulse(freq, duration)
        breakdown = emitter_crosstalk(model, pulse, {0: 0.5, 1: 0.5})
        single = transition_crosstalk(rabi, ghz_to_angular_mhz(3.0), gamma, duration)
        assert breakdown.total == pytest.approx(2 * single, rel=1e-12)
        assert breakdown.per_transition[(0, "Ex", 0)] == pytest.approx(single, rel=1e-12)

    def test_total_is_clamped_sum(self):
        freq = 470_400.0
        model = EmitterOpticalModel(
            label="D",
            transitions=(
                OpticalTransition(0, "Ex", freq, 500.0, {-1: 30.0, 0: 40.0, 1: 30.0}),
            ),
        )
        breakdown = emitter_crosstalk(model, ReadoutPulse(freq, 2.0), {0: 1.0})
        raw = sum(breakdown.per_transition.values())
        assert raw > 1.0
        assert breakdown.total == 1.0
        branches = breakdown.branch_populations()
        assert sum(branches.values()) == pytest.approx(1.0, abs=1e-12)

    def test_sum_consistency_below_clamp(self):
        model = _single_emitter(branching={-1: 2.0, 0: 5.0, 1: 3.0})
        pulse = ReadoutPulse(470_401.5, 0.3)
        breakdown = emitter_crosstalk(model, pulse, {0: 1.0})
        assert breakdown.total == pytest.approx(
            sum(breakdown.per_transition.values()), abs=1e-12
        )
        assert breakdown.total < 1.0

    def test_population_validation(self):
        model = _single_emitter()
        pulse = ReadoutPulse(470_400.0, 1.0)
        with pytest.raises(DomainError):
            emitter_crosstalk(model, pulse, {0: 0.6, 1: 0.6})
        with pytest.raises(DomainError):
            emitter_crosstalk(model, pulse, {0: 1.2, 1: -0.2})
        with pytest.raises(DomainError):
            emitter_crosstalk(model, pulse, {2: 1.0})


class TestMinSafeDetuning:
    def test_already_satisfied_on_resonance(self):
        assert min_safe_detuning(10.0, 1.0, 0.1, 0.9) == 0.0

    def test_round_trip_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            omega = rng.uniform(1.0, 2e3)
            gamma = rng.uniform(1.0, 150.0)
            duration = rng.uniform(0.05, 5.0)
            on_res = transition_crosstalk(omega, 0.0, gamma, duration)
            target = rng.uniform(0.01, 0.9) * on_res
            delta_ghz = min_safe_detuning(omega, gamma, duration, target)
            delta = ghz_to_angular_mhz(delta_ghz)
            value = transition_crosstalk(omega, delta, gamma, duration)
            assert value == pytest.approx(target, rel=1e-9)
            assert value <= target
            assert transition_crosstalk(omega, 0.999 * delta, gamma, duration) > target

    def test_msr_calibration_anchor(self):
        omega = calibrate_rabi(16.0, 0.01, DEFAULT_GAMMA_MHZ, DEFAULT_MSR_DURATION_US)
        delta = min_safe_detuning(omega, DEFAULT_GAMMA_MHZ, DEFAULT_MSR_DURATION_US, 0.01)
        assert delta == pytest.approx(16.0, rel=0.01)

    def test_target_validation(self):
        with pytest.raises(DomainError):
            min_safe_detuning(10.0, 1.0, 1.0, 0.0)
        with pytest.raises(DomainError):
            min_safe_detuning(10.0, 1.0, 1.0, 1.0)


class TestCalibrateRabi:
    def test_golden_value(self):
        omega = calibrate_rabi(16.0, 0.01, DEFAULT_GAMMA_MHZ, DEFAULT_MSR_DURATION_US)
        assert omega == pytest.approx(GOLDEN_CALIBRATED_OMEGA, rel=1e-12)

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            gamma = rng.uniform(1.0, 150.0)
            duration = rng.uniform(0.05, 5.0)
            delta_ghz = rng.uniform(0.1, 50.0)
            limit = -math.expm1(-gamma * duration / 2.0)
            gamma_ref = rng.uniform(0.001, 0.95) * limit
            omega = calibrate_rabi(delta_ghz, gamma_ref, gamma, duration)
            value = transition_crosstalk(omega, ghz_to_angular_mhz(delta_ghz), gamma, duration)
            assert value == pytest.approx(gamma_ref, rel=1e-9)

    def test_degenerate_on_resonance(self):
        with pytest.raises(DegenerateInputError):
            calibrate_rabi(0.0, 0.01, 80.0, 1.0)

    def test_unsolvable_anchor(self):
        # gamma*duration = 0.1 cannot reach a 10% probability at any omega.
        with pytest.raises(UnsolvableError):
            calibrate_rabi(5.0, 0.1, 1.0, 0.1)

    def test_reference_validation(self):
        with pytest.raises(DomainError):
            calibrate_rabi(5.0, 0.0, 80.0, 1.0)
        with pytest.raises(DomainError):
            calibrate_rabi(5.0, 1.0, 80.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(
    omega=st.floats(1.0, 1e3),
    gamma=st.floats(0.5, 150.0),
    duration=st.floats(0.05, 5.0),
    fraction=st.floats(0.01, 0.9),
)
def test_inversion_round_trip_property(omega, gamma, duration, fraction):
    target = fraction * transition_crosstalk(omega, 0.0, gamma, duration)
    delta_ghz = min_safe_detuning(omega, gamma, duration, target)
    back = transition_crosstalk(omega, ghz_to_angular_mhz(delta_ghz), gamma, duration)
    assert back == pytest.approx(target, rel=1e-9)


class TestTypes:
    def test_transition_validation(self):
        with pytest.raises(DomainError):
            OpticalTransition(0, "Q7", 470e3, 1.0, {0: 1.0})
        with pytest.raises(DomainError):
            OpticalTransition(2, "Ex", 470e3, 1.0, {0: 1.0})
        with pytest.raises(DomainError):
            OpticalTransition(0, "Ex", -1.0, 1.0, {0: 1.0})
        with pytest.raises(DomainError):
            OpticalTransition(0, "Ex", 470e3, -1.0, {0: 1.0})
        with pytest.raises(DomainError):
            OpticalTransition(0, "Ex", 470e3, 1.0, {0: 0.0})

    def test_model_validation(self):
        with pytest.raises(DomainError):
            EmitterOpticalModel(label="A", transitions=())
        tr = OpticalTransition(0, "Ex", 470e3, 1.0, {0: 1.0})
        with pytest.raises(DomainError):
            EmitterOpticalModel(label="A", transitions=(tr, tr))

    def test_pulse_validation(self):
        with pytest.raises(DomainError):
            ReadoutPulse(470e3, -0.5)

    def test_model_json_round_trip(self):
        model = EmitterOpticalModel(
            label="B",
            transitions=(
                OpticalTransition(0, "Ex", 470_401.0, 55.0, {-1: 1.0, 0: 80.0, 1: 2.0}),
                OpticalTransition(1, "E1", 470_395.0, 40.0, {1: 83.0}),
            ),
        )
        clone = EmitterOpticalModel.from_json(model.to_json())
        assert clone == model

    def test_breakdown_from_probability(self):
        bd = CrosstalkBreakdown.from_probability(0.25, branch=1)
        assert bd.total == 0.25
        assert bd.branch_populations() == {1: 0.25}
        assert CrosstalkBreakdown.from_probability(0.0).dominant is None
        with pytest.raises(DomainError):
            CrosstalkBreakdown.from_probability(1.5)
