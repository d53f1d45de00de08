"""Monte Carlo register-yield estimation from a frequency distribution.

A candidate register of N emitters is "viable" when each emitter can be
read out resonantly while every other emitter's projection probability
stays at or below a tolerance. Frequencies are drawn from a fitted
density model; the fraction of viable draws estimates the yield of
usable registers, reported with a Wilson 95% interval.

Trial t consumes only the substream derived from (seed, t), and the
reduction is an integer success count, so results are bitwise identical
no matter how trials are chunked or parallelized.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .crosstalk import (
    DEFAULT_GAMMA_MHZ,
    DEFAULT_MSR_DURATION_US,
    calibrate_rabi,
    transition_crosstalk,
)
from .ensemble import KernelDensityModel, TrialStreams, sample_with_rng
from .errors import DomainError
from .units import ghz_to_angular_mhz

# Anchor used to resolve a "calibrated" Rabi frequency: 16 GHz detuning
# keeps the projection probability at 1%.
CALIBRATION_ANCHOR_GHZ = 16.0
CALIBRATION_ANCHOR_PROBABILITY = 0.01

SSR_DURATION_US = 3.7

_Z95 = 1.959963984540054

VIABILITY_MODES = ("worst_case", "permissive")


@dataclass(frozen=True)
class ReadoutPreset:
    """Readout-pulse parameters used to score candidate registers.

    ``omega_mhz`` is the optical Rabi frequency in rad/us, or the string
    "calibrated" to derive it from the (16 GHz, 1%) anchor given gamma and
    duration.
    """

    name: str
    omega_mhz: float | str
    gamma_mhz: float = DEFAULT_GAMMA_MHZ
    duration_us: float = DEFAULT_MSR_DURATION_US

    def __post_init__(self):
        if not self.duration_us > 0:
            raise DomainError("preset duration must be positive")
        if not self.gamma_mhz > 0:
            raise DomainError("preset gamma must be positive")
        if isinstance(self.omega_mhz, str):
            if self.omega_mhz != "calibrated":
                raise DomainError(f"unknown omega spec {self.omega_mhz!r}")
        elif self.omega_mhz < 0:
            raise DomainError("preset omega must be non-negative")

    def resolved_omega_mhz(self) -> float:
        if self.omega_mhz == "calibrated":
            return calibrate_rabi(
                CALIBRATION_ANCHOR_GHZ,
                CALIBRATION_ANCHOR_PROBABILITY,
                self.gamma_mhz,
                self.duration_us,
            )
        return float(self.omega_mhz)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "omega_mhz": self.omega_mhz,
            "gamma_mhz": self.gamma_mhz,
            "duration_us": self.duration_us,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReadoutPreset":
        omega = doc["omega_mhz"]
        return cls(
            name=str(doc.get("name", "custom")),
            omega_mhz=omega if isinstance(omega, str) else float(omega),
            gamma_mhz=float(doc.get("gamma_mhz", DEFAULT_GAMMA_MHZ)),
            duration_us=float(doc.get("duration_us", DEFAULT_MSR_DURATION_US)),
        )


def msr_preset(gamma_mhz: float = DEFAULT_GAMMA_MHZ, duration_us: float = DEFAULT_MSR_DURATION_US) -> ReadoutPreset:
    """Multi-shot readout preset; Rabi frequency from the 16 GHz / 1% anchor."""
    return ReadoutPreset("MSR", "calibrated", gamma_mhz, duration_us)


def ssr_preset(gamma_mhz: float = DEFAULT_GAMMA_MHZ) -> ReadoutPreset:
    """Single-shot readout preset: omega = gamma, 3.7 us pulse."""
    return ReadoutPreset("SSR", gamma_mhz, gamma_mhz, SSR_DURATION_US)


def wilson_interval(successes: int, trials: int, z: float = _Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0 or not 0 <= successes <= trials:
        raise DomainError("need 0 <= successes <= trials with trials > 0")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (p + z2 / (2.0 * trials)) / denom
    half = z * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials)) / denom
    # Snap against rounding so the interval always contains the estimate.
    return (min(max(0.0, center - half), p), max(min(1.0, center + half), p))


@dataclass(frozen=True)
class YieldEstimate:
    """Monte Carlo viability probability with a Wilson 95% interval."""

    n_emitters: int
    gamma_threshold: float
    trials: int
    successes: int
    probability: float
    ci95: tuple[float, float]

    def __post_init__(self):
        if self.successes > self.trials:
            raise DomainError("successes cannot exceed trials")


def _pair_spacing_stats(freqs: np.ndarray) -> tuple[float, float]:
    """(min pairwise spacing, best isolated emitter's nearest spacing)."""
    n = freqs.size
    if n < 2:
        return math.inf, math.inf
    diff = np.abs(freqs[:, None] - freqs[None, :])
    np.fill_diagonal(diff, math.inf)
    nearest = diff.min(axis=1)
    return float(nearest.min()), float(nearest.max())


def cluster_viability(
    frequencies_ghz,
    preset: ReadoutPreset,
    gamma_threshold: float,
    mode: str = "worst_case",
) -> tuple[bool, float]:
    """Score one candidate register.

    Addresses each emitter in turn (laser parked at its frequency) and
    evaluates the projection probability for every spectator from the
    pair detuning. In "worst_case" mode (default) the register is viable
    only if the worst (addressed, spectator) pair is at or below the
    threshold; "permissive" requires only that some emitter can be read
    out within the threshold. Returns (viable, worst pairwise crosstalk).
    """
    if mode not in VIABILITY_MODES:
        raise DomainError(f"unknown viability mode {mode!r}")
    if not gamma_threshold > 0:
        raise DomainError("gamma_threshold must be positive")
    freqs = np.asarray(frequencies_ghz, dtype=float)
    if freqs.ndim != 1 or freqs.size < 1:
        raise DomainError("need at least one frequency")
    omega = preset.resolved_omega_mhz()

    if freqs.size == 1:
        return True, 0.0

    worst = 0.0
    best_addressed = math.inf
    for m in range(freqs.size):
        deltas = np.delete(freqs, m) - freqs[m]
        gammas = transition_crosstalk(
            omega, ghz_to_angular_mhz(deltas), preset.gamma_mhz, preset.duration_us
        )
        worst_here = float(np.max(gammas))
        worst = max(worst, worst_here)
        best_addressed = min(best_addressed, worst_here)

    decisive = worst if mode == "worst_case" else best_addressed
    return decisive <= gamma_threshold, worst


def _spacing_to_crosstalk(spacing_ghz, preset: ReadoutPreset, omega: float):
    """Worst pair crosstalk from the smallest pair spacing (monotone map)."""
    return transition_crosstalk(
        omega,
        ghz_to_angular_mhz(np.asarray(spacing_ghz, dtype=float)),
        preset.gamma_mhz,
        preset.duration_us,
    )


def _prefix_spacings(draws, n_values, mode, out_row):
    """Decisive spacing of each prefix of ``draws``, grown one point at a time.

    Maintains every point's nearest-neighbor distance incrementally, so a
    trial costs O(n_max^2) small vector ops instead of one full pair matrix
    per prefix.
    """
    n_max = draws.size
    nearest = np.full(n_max, math.inf)
    min_sp = math.inf
    col = 0
    for k in range(n_max):
        if k > 0:
            d = np.abs(draws[:k] - draws[k])
            np.minimum(nearest[:k], d, out=nearest[:k])
            nearest[k] = d.min()
            min_sp = min(min_sp, nearest[k])
        while col < len(n_values) and n_values[col] == k + 1:
            if k == 0:
                out_row[col] = math.inf
            else:
                out_row[col] = min_sp if mode == "worst_case" else nearest[: k + 1].max()
            col += 1


def _decisive_spacings(model, seed, trials, n_values, mode, workers):
    """Per-trial decisive spacing for each register size in ``n_values``.

    Trial t draws max(n_values) frequencies from substream (seed, t); the
    size-n register is the prefix of that draw, so spacings are nested and
    yields are exactly monotone in n. Returns an array (trials, len(n_values))
    with columns in the caller's order.
    """
    order = np.argsort(np.asarray(n_values), kind="stable")
    sorted_ns = [n_values[i] for i in order]
    n_max = sorted_ns[-1]
    out = np.empty((trials, len(sorted_ns)))

    def fill(chunk):
        lo, hi = chunk
        streams = TrialStreams(seed)
        for t in range(lo, hi):
            draws = sample_with_rng(model, streams.at(t), n_max)
            _prefix_spacings(draws, sorted_ns, mode, out[t])

    chunks = _chunks(trials, workers)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, chunks))
    else:
        for chunk in chunks:
            fill(chunk)
    return out[:, np.argsort(order, kind="stable")]


def _chunks(trials: int, workers: int):
    size = max(1, math.ceil(trials / max(workers, 1)))
    return [(lo, min(lo + size, trials)) for lo in range(0, trials, size)]


def estimate_yield(
    model: KernelDensityModel,
    n: int,
    preset: ReadoutPreset,
    gamma_threshold: float,
    trials: int,
    seed: int,
    mode: str = "worst_case",
    workers: int = 1,
) -> YieldEstimate:
    """Probability that n drawn emitters form a viable register.

    Deterministic given (model, preset, seed, trials); trial t uses
    substream (seed, t) regardless of ``workers``.
    """
    if trials < 100:
        raise DomainError("need at least 100 trials")
    if n < 1:
        raise DomainError("register size must be at least 1")
    if mode not in VIABILITY_MODES:
        raise DomainError(f"unknown viability mode {mode!r}")
    if not gamma_threshold > 0:
        raise DomainError("gamma_threshold must be positive")
    omega = preset.resolved_omega_mhz()
    spacings = _decisive_spacings(model, seed, trials, [n], mode, workers)[:, 0]
    worst = _spacing_to_crosstalk(spacings, preset, omega)
    successes = int(np.count_nonzero(worst <= gamma_threshold))
    return YieldEstimate(
        n_emitters=n,
        gamma_threshold=gamma_threshold,
        trials=trials,
        successes=successes,
        probability=successes / trials,
        ci95=wilson_interval(successes, trials),
    )


def yield_sweep(
    model: KernelDensityModel,
    n_values,
    thresholds,
    preset: ReadoutPreset,
    trials: int,
    seed: int,
    mode: str = "worst_case",
    workers: int = 1,
) -> list[YieldEstimate]:
    """One estimate per (n, threshold) with common random numbers.

    Every trial's size-n register is a prefix of its size-n_max draw and
    every threshold scores the same draws, so within the table the yield
    is exactly non-increasing in n and non-decreasing in threshold.
    """
    if trials < 100:
        raise DomainError("need at least 100 trials")
    n_values = [int(n) for n in n_values]
    thresholds = [float(t) for t in thresholds]
    if not n_values or not thresholds:
        raise DomainError("n_values and thresholds must be non-empty")
    if min(n_values) < 1:
        raise DomainError("register sizes must be at least 1")
    if min(thresholds) <= 0:
        raise DomainError("thresholds must be positive")
    omega = preset.resolved_omega_mhz()
    spacings = _decisive_spacings(model, seed, trials, n_values, mode, workers)
    worst = _spacing_to_crosstalk(spacings, preset, omega)

    estimates = []
    for col, n in enumerate(n_values):
        for thr in thresholds:
            successes = int(np.count_nonzero(worst[:, col] <= thr))
            estimates.append(
                YieldEstimate(
                    n_emitters=n,
                    gamma_threshold=thr,
                    trials=trials,
                    successes=successes,
                    probability=successes / trials,
                    ci95=wilson_interval(successes, trials),
                )
            )
    return estimates


def write_yield_csv(path, estimates, metadata: dict | None = None) -> None:
    """Emit sweep rows as ``n,threshold,trials,successes,yield,ci_lo,ci_hi``."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if metadata:
            for key, value in metadata.items():
                fh.write(f"# {key}={value}\n")
        fh.write("n,threshold,trials,successes,yield,ci_lo,ci_hi\n")
        for est in estimates:
            fh.write(
                f"{est.n_emitters},{est.gamma_threshold!r},{est.trials},"
                f"{est.successes},{est.probability!r},{est.ci95[0]!r},{est.ci95[1]!r}\n"
            )


def estimates_to_dicts(estimates) -> list[dict]:
    return [
        {
            "n": est.n_emitters,
            "threshold": est.gamma_threshold,
            "trials": est.trials,
            "successes": est.successes,
            "yield": est.probability,
            "ci_lo": est.ci95[0],
            "ci_hi": est.ci95[1],
        }
        for est in estimates
    ]
