import itertools
import math

import numpy as np
import pytest
from scipy.integrate import quad

from nvregister.crosstalk import DEFAULT_GAMMA_MHZ, min_safe_detuning, transition_crosstalk
from nvregister.ensemble import KernelDensityModel, kde_fit, sample_with_rng, substream, surrogate_dataset
from nvregister.errors import DomainError
from nvregister.units import ghz_to_angular_mhz
from nvregister.yield_mc import (
    ReadoutPreset,
    cluster_viability,
    estimate_yield,
    estimates_to_dicts,
    msr_preset,
    ssr_preset,
    wilson_interval,
    yield_sweep,
)

# Frozen via independent mpmath bisection, see test_crosstalk.py.
GOLDEN_CALIBRATED_OMEGA = 2016.0785443844449272


def safe_detuning(preset, threshold):
    return min_safe_detuning(
        preset.resolved_omega_mhz(), preset.gamma_mhz, preset.duration_us, threshold
    )


class TestPresets:
    def test_msr_resolves_calibrated_omega(self):
        preset = msr_preset()
        assert preset.resolved_omega_mhz() == pytest.approx(GOLDEN_CALIBRATED_OMEGA, rel=1e-12)

    def test_ssr_matches_single_shot_parameters(self):
        preset = ssr_preset()
        assert preset.omega_mhz == preset.gamma_mhz == DEFAULT_GAMMA_MHZ
        assert preset.duration_us == 3.7

    def test_ssr_safe_detuning_is_smaller(self):
        assert safe_detuning(ssr_preset(), 0.01) < safe_detuning(msr_preset(), 0.01)

    def test_json_round_trip(self):
        preset = ReadoutPreset("custom", 123.0, 50.0, 1.5)
        clone = ReadoutPreset.from_dict(preset.to_dict())
        assert clone == preset
        calibrated = ReadoutPreset.from_dict(msr_preset().to_dict())
        assert calibrated.omega_mhz == "calibrated"

    def test_validation(self):
        with pytest.raises(DomainError):
            ReadoutPreset("x", 1.0, 1.0, 0.0)
        with pytest.raises(DomainError):
            ReadoutPreset("x", "magic", 1.0, 1.0)
        with pytest.raises(DomainError):
            ReadoutPreset("x", -5.0, 1.0, 1.0)


class TestWilson:
    def test_contains_point_estimate(self):
        for s, t in ((0, 100), (1, 100), (50, 100), (100, 100), (999, 1000)):
            lo, hi = wilson_interval(s, t)
            assert lo <= s / t <= hi
            assert 0.0 <= lo <= hi <= 1.0

    def test_validation(self):
        with pytest.raises(DomainError):
            wilson_interval(5, 0)
        with pytest.raises(DomainError):
            wilson_interval(5, 4)


class TestClusterViability:
    def test_single_emitter(self):
        viable, worst = cluster_viability([100.0], msr_preset(), 1e-3)
        assert viable and worst == 0.0

    def test_identical_frequencies(self):
        preset = msr_preset()
        viable, worst = cluster_viability([5.0, 5.0], preset, 0.5)
        expected = -math.expm1(-preset.gamma_mhz * preset.duration_us / 2.0)
        assert worst == pytest.approx(expected, rel=1e-12)
        assert not viable

    def test_three_spaced_emitters_brute_force(self):
        preset = msr_preset()
        threshold = 0.01
        spacing = safe_detuning(preset, threshold)
        freqs = [0.0, 1.05 * spacing, 2.2 * spacing]
        viable, worst = cluster_viability(freqs, preset, threshold)
        assert viable
        # exhaustive pairwise oracle
        omega = preset.resolved_omega_mhz()
        oracle = max(
            transition_crosstalk(
                omega, ghz_to_angular_mhz(a - b), preset.gamma_mhz, preset.duration_us
            )
            for a, b in itertools.permutations(freqs, 2)
        )
        assert worst == pytest.approx(oracle, rel=1e-12)
        assert oracle <= threshold

    def test_permissive_mode(self):
        preset = msr_preset()
        threshold = 0.01
        spacing = safe_detuning(preset, threshold)
        freqs = [0.0, 2.0 * spacing, 2.0 * spacing + 1e-6]
        strict_viable, worst = cluster_viability(freqs, preset, threshold)
        loose_viable, loose_worst = cluster_viability(freqs, preset, threshold, mode="permissive")
        assert not strict_viable
        assert loose_viable
        assert loose_worst == worst  # reported statistic is mode-independent

    def test_validation(self):
        with pytest.raises(DomainError):
            cluster_viability([], msr_preset(), 0.01)
        with pytest.raises(DomainError):
            cluster_viability([1.0], msr_preset(), 0.0)
        with pytest.raises(DomainError):
            cluster_viability([1.0], msr_preset(), 0.01, mode="sideways")


def _discrete_model(points, bandwidth=1e-9):
    return KernelDensityModel(np.asarray(points, dtype=float), bandwidth)


class TestEstimateYield:
    def test_single_emitter_yield_is_exactly_one(self):
        model = _discrete_model([0.0, 50.0])
        est = estimate_yield(model, 1, msr_preset(), 0.01, trials=500, seed=1)
        assert est.probability == 1.0
        assert est.successes == est.trials == 500

    def test_threshold_at_least_one_is_always_viable(self):
        model = _discrete_model([0.0, 0.0, 0.0])
        est = estimate_yield(model, 3, msr_preset(), 1.0, trials=200, seed=2)
        assert est.probability == 1.0

    def test_two_point_hand_enumeration(self):
        # Frequencies v or v+D with probability 1/2; D chosen safely above
        # the threshold detuning. A 2-register is viable unless both draws
        # land on the same point: P(viable) = 1/2 by hand enumeration.
        preset = msr_preset()
        d = 2.0 * safe_detuning(preset, 0.01)
        model = _discrete_model([0.0, d])
        trials = 20_000
        est = estimate_yield(model, 2, preset, 0.01, trials=trials, seed=3)
        se = math.sqrt(0.5 * 0.5 / trials)
        assert abs(est.probability - 0.5) <= 3 * se

    def test_three_atom_exhaustive_enumeration(self):
        preset = msr_preset()
        threshold = 0.01
        d = 1.8 * safe_detuning(preset, threshold)
        atoms = [0.0, d, 2.3 * d]
        model = _discrete_model(atoms)
        for n in (2, 3):
            exact = 0.0
            for combo in itertools.product(atoms, repeat=n):
                viable, _ = cluster_viability(list(combo), preset, threshold)
                exact += viable / 3.0**n
            trials = 20_000
            est = estimate_yield(model, n, preset, threshold, trials=trials, seed=4)
            se = math.sqrt(max(exact * (1 - exact), 1e-12) / trials)
            assert abs(est.probability - exact) <= 3 * se

    def test_quadrature_oracle_for_pairs(self):
        # Independent route: P(|X - Y| >= d) for iid KDE draws via nested
        # quadrature over the fitted density, no sampling involved.
        preset = ssr_preset()
        threshold = 0.01
        d = safe_detuning(preset, threshold)
        model = kde_fit(surrogate_dataset("scd", seed=5), "auto")
        lo = model.sample_points.min() - 10 * model.bandwidth_ghz
        hi = model.sample_points.max() + 10 * model.bandwidth_ghz
        exact, _ = quad(
            lambda x: model.density(x) * (model.cdf(x - d) + 1.0 - model.cdf(x + d)),
            lo,
            hi,
            limit=400,
        )
        trials = 20_000
        est = estimate_yield(model, 2, preset, threshold, trials=trials, seed=6)
        se = math.sqrt(exact * (1 - exact) / trials)
        assert abs(est.probability - exact) <= 3 * se

    def test_determinism_and_worker_independence(self):
        model = kde_fit(surrogate_dataset("scd", seed=7), "auto")
        kwargs = dict(n=3, preset=msr_preset(), gamma_threshold=0.01, trials=2000, seed=8)
        a = estimate_yield(model, **kwargs)
        b = estimate_yield(model, **kwargs)
        c = estimate_yield(model, workers=4, **kwargs)
        assert a == b == c

    def test_permissive_at_least_worst_case(self):
        model = kde_fit(surrogate_dataset("scd", seed=9), "auto")
        strict = estimate_yield(model, 4, msr_preset(), 0.01, trials=2000, seed=10)
        loose = estimate_yield(model, 4, msr_preset(), 0.01, trials=2000, seed=10,
                               mode="permissive")
        assert loose.successes >= strict.successes

    def test_trials_validation(self):
        model = _discrete_model([0.0, 10.0])
        with pytest.raises(DomainError):
            estimate_yield(model, 2, msr_preset(), 0.01, trials=50, seed=1)


class TestYieldSweep:
    def test_exact_monotonicity(self):
        model = kde_fit(surrogate_dataset("scd", seed=11), "auto")
        n_values = [1, 2, 3, 5, 9]
        thresholds = [1e-3, 1e-2, 1e-1]
        table = {}
        for est in yield_sweep(model, n_values, thresholds, msr_preset(), 1000, seed=12):
            table[(est.n_emitters, est.gamma_threshold)] = est.successes
        for thr in thresholds:
            for a, b in zip(n_values, n_values[1:]):
                assert table[(b, thr)] <= table[(a, thr)]
        for n in n_values:
            for a, b in zip(thresholds, thresholds[1:]):
                assert table[(n, a)] <= table[(n, b)]

    def test_ssr_dominates_msr_cellwise(self):
        model = kde_fit(surrogate_dataset("scd", seed=13), "auto")
        n_values = [2, 3, 5]
        thresholds = [1e-3, 1e-2, 1e-1]
        msr = yield_sweep(model, n_values, thresholds, msr_preset(), 1000, seed=14)
        ssr = yield_sweep(model, n_values, thresholds, ssr_preset(), 1000, seed=14)
        for a, b in zip(msr, ssr):
            assert (a.n_emitters, a.gamma_threshold) == (b.n_emitters, b.gamma_threshold)
            assert b.successes >= a.successes

    def test_cells_match_per_trial_viability_reconstruction(self):
        # Rebuild every trial's draw from its substream and score it with
        # cluster_viability directly; counts must match the sweep exactly.
        model = kde_fit(surrogate_dataset("scd", seed=15), "auto")
        preset = msr_preset()
        n_values = [2, 4]
        thresholds = [1e-2]
        trials, seed = 200, 16
        sweep = yield_sweep(model, n_values, thresholds, preset, trials, seed)
        for est in sweep:
            count = 0
            for t in range(trials):
                draws = sample_with_rng(model, substream(seed, t), max(n_values))
                viable, _ = cluster_viability(
                    draws[: est.n_emitters], preset, est.gamma_threshold
                )
                count += viable
            assert count == est.successes

    def test_dict_export(self):
        model = _discrete_model([0.0, 40.0])
        rows = estimates_to_dicts(yield_sweep(model, [1, 2], [0.5], msr_preset(), 200, seed=17))
        assert rows[0]["n"] == 1 and rows[0]["yield"] == 1.0
        assert set(rows[0]) == {"n", "threshold", "trials", "successes", "yield", "ci_lo", "ci_hi"}
