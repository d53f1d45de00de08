"""Off-resonant excitation-and-decay probability for multiplexed readout.

When a resonant readout laser addresses one emitter, every other emitter
in the confocal volume sees the same field detuned from its own optical
transitions. The chance that the laser excites a non-addressed emitter
through transition ``ground -> excited`` and that the excited state then
decays into ground state ``j`` during a pulse of length T is

    p = 1 - exp(- gamma * omega^2 * T / (2 * (omega^2 + delta^2)))

with optical Rabi frequency ``omega``, laser detuning ``delta`` and branch
decay rate ``gamma``, all in rad/us, and T in microseconds. Such an event
projects the spectator's spin, so its probability is the readout-induced
bit error ("crosstalk") this module computes, aggregates over transitions,
and inverts for calibration and safe-detuning design.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, DomainError, UnsolvableError
from .units import angular_mhz_to_ghz, ghz_to_angular_mhz

GROUND_LABELS = (-1, 0, 1)
EXCITED_LABELS = ("E1", "E2", "Ex", "Ey", "A1", "A2")

# Decay rate fallback used by presets: 1/(12 ns) excited-state lifetime,
# a typical order for this emitter class. Assumption, always overridable.
DEFAULT_GAMMA_MHZ = 1.0 / 0.012

# Default multi-shot readout pulse length in us. Assumption (the actual
# hardware value is equipment-specific); flagged in output metadata.
DEFAULT_MSR_DURATION_US = 0.6


@dataclass(frozen=True)
class OpticalTransition:
    """One spin-conserving optical line of an emitter.

    ground: initial spin sublevel, one of -1, 0, +1.
    excited: excited-orbital label, one of E1, E2, Ex, Ey, A1, A2.
    frequency_ghz: optical transition frequency (absolute or offset, GHz).
    rabi_mhz: optical Rabi frequency in rad/us at the readout power.
    branching_mhz: decay rate from the excited state into each ground
        sublevel, rad/us, keyed by the ground label.
    """

    ground: int
    excited: str
    frequency_ghz: float
    rabi_mhz: float
    branching_mhz: dict[int, float]

    def __post_init__(self):
        if self.ground not in GROUND_LABELS:
            raise DomainError(f"unknown ground label {self.ground!r}")
        if self.excited not in EXCITED_LABELS:
            raise DomainError(f"unknown excited label {self.excited!r}")
        if not self.frequency_ghz > 0:
            raise DomainError("transition frequency must be positive")
        if self.rabi_mhz < 0:
            raise DomainError("rabi frequency must be non-negative")
        rates = dict(self.branching_mhz)
        for j, g in rates.items():
            if j not in GROUND_LABELS:
                raise DomainError(f"unknown branch label {j!r}")
            if g < 0:
                raise DomainError("branching rates must be non-negative")
        if not any(g > 0 for g in rates.values()):
            raise DomainError("at least one branching rate must be positive")
        object.__setattr__(self, "branching_mhz", rates)

    @property
    def total_decay_mhz(self) -> float:
        return sum(self.branching_mhz.values())


@dataclass(frozen=True)
class ReadoutPulse:
    """A resonant readout pulse: laser frequency (GHz) and duration (us)."""

    laser_frequency_ghz: float
    duration_us: float

    def __post_init__(self):
        if self.duration_us < 0:
            raise DomainError("pulse duration must be non-negative")


@dataclass(frozen=True)
class EmitterOpticalModel:
    """An emitter's optical lines, identified by a cluster-unique label."""

    label: str
    transitions: tuple[OpticalTransition, ...]

    def __post_init__(self):
        trs = tuple(self.transitions)
        if not trs:
            raise DomainError("emitter needs at least one transition")
        pairs = [(t.ground, t.excited) for t in trs]
        if len(set(pairs)) != len(pairs):
            raise DomainError("duplicate (ground, excited) transition in emitter model")
        object.__setattr__(self, "transitions", trs)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "transitions": [
                {
                    "ground": t.ground,
                    "excited": t.excited,
                    "frequency_ghz": t.frequency_ghz,
                    "rabi_mhz": t.rabi_mhz,
                    "branching_mhz": {str(j): g for j, g in sorted(t.branching_mhz.items())},
                }
                for t in self.transitions
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EmitterOpticalModel":
        transitions = tuple(
            OpticalTransition(
                ground=int(t["ground"]),
                excited=str(t["excited"]),
                frequency_ghz=float(t["frequency_ghz"]),
                rabi_mhz=float(t["rabi_mhz"]),
                branching_mhz={int(j): float(g) for j, g in t["branching_mhz"].items()},
            )
            for t in doc["transitions"]
        )
        return cls(label=str(doc["label"]), transitions=transitions)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EmitterOpticalModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CrosstalkBreakdown:
    """Per-transition crosstalk probabilities and their clamped sum.

    Keys of ``per_transition`` are (initial ground, excited, final ground).
    ``total`` is the sum of all entries clamped to [0, 1]; ``dominant`` is
    the key with the largest contribution (None when nothing contributes).
    """

    per_transition: dict[tuple[int, str, int], float] = field(default_factory=dict)
    total: float = 0.0
    dominant: tuple[int, str, int] | None = None

    def branch_populations(self) -> dict[int, float]:
        """Probability of landing in each ground state, summing to ``total``.

        When the raw per-transition sum exceeds 1 the branch weights are
        rescaled so they remain consistent with the clamped total.
        """
        raw: dict[int, float] = {}
        for (_, _, j), p in self.per_transition.items():
            raw[j] = raw.get(j, 0.0) + p
        s = sum(raw.values())
        if s <= 0.0:
            return {}
        scale = self.total / s
        return {j: p * scale for j, p in raw.items()}

    @classmethod
    def from_probability(
        cls, total: float, ground: int = 0, excited: str = "Ex", branch: int = 0
    ) -> "CrosstalkBreakdown":
        """Build a single-channel breakdown with a known total probability."""
        if not 0.0 <= total <= 1.0:
            raise DomainError("crosstalk probability must lie in [0, 1]")
        if total == 0.0:
            return cls()
        key = (ground, excited, branch)
        return cls(per_transition={key: total}, total=total, dominant=key)


def transition_crosstalk(omega, delta, gamma, duration):
    """Excitation-and-decay probability of a single transition.

    omega, gamma in rad/us, duration in us; delta in rad/us, any sign
    (``delta`` may be a numpy array, in which case an array is returned).
    Even in delta, non-decreasing in omega magnitude, gamma and duration,
    non-increasing in the detuning magnitude.
    """
    if omega < 0:
        raise DomainError("omega must be non-negative")
    if gamma < 0:
        raise DomainError("gamma must be non-negative")
    if duration < 0:
        raise DomainError("duration must be non-negative")
    d2 = np.square(delta)
    if omega == 0.0:
        # No optical coupling, no excitation (also avoids 0/0 at delta=0).
        out = np.zeros_like(d2, dtype=float)
        return out if isinstance(delta, np.ndarray) else 0.0
    w2 = omega * omega
    exponent = gamma * duration * w2 / (2.0 * (w2 + d2))
    out = -np.expm1(-exponent)
    return out if isinstance(delta, np.ndarray) else float(out)


def emitter_crosstalk(
    model: EmitterOpticalModel,
    pulse: ReadoutPulse,
    initial_state_populations: dict[int, float],
) -> CrosstalkBreakdown:
    """Aggregate crosstalk of one emitter under a given readout pulse.

    ``initial_state_populations`` maps ground labels to occupation
    probabilities (must sum to 1 within 1e-9). Transitions starting from
    an unpopulated ground state cannot be driven and are excluded; every
    other transition contributes its full conditional probability per
    decay branch, and the contributions are summed then clamped to 1.
    """
    pops = dict(initial_state_populations)
    for i, p in pops.items():
        if i not in GROUND_LABELS:
            raise DomainError(f"unknown ground label {i!r} in populations")
        if p < 0 or p > 1 + 1e-12:
            raise DomainError("populations must lie in [0, 1]")
    if abs(sum(pops.values()) - 1.0) > 1e-9:
        raise DomainError("populations must sum to 1 within 1e-9")

    per: dict[tuple[int, str, int], float] = {}
    for tr in model.transitions:
        if pops.get(tr.ground, 0.0) <= 0.0:
            continue
        delta = ghz_to_angular_mhz(pulse.laser_frequency_ghz - tr.frequency_ghz)
        for j, gamma_branch in tr.branching_mhz.items():
            per[(tr.ground, tr.excited, j)] = transition_crosstalk(
                tr.rabi_mhz, delta, gamma_branch, pulse.duration_us
            )
    raw_total = sum(per.values())
    total = min(raw_total, 1.0)
    dominant = max(per, key=per.get) if per else None
    return CrosstalkBreakdown(per_transition=per, total=total, dominant=dominant)


def min_safe_detuning(omega, gamma, duration, gamma_target) -> float:
    """Smallest |detuning| (GHz) keeping the crosstalk at or below a target.

    Closed-form inversion of the single-transition probability,
    delta^2 = omega^2 * (gamma*T / (2L) - 1) with L = -ln(1 - target),
    falling back to bisection if the closed form misbehaves numerically.
    Returns 0 when the target is already met on resonance.
    """
    if not 0.0 < gamma_target < 1.0:
        raise DomainError("gamma_target must lie strictly between 0 and 1")
    on_resonance = transition_crosstalk(omega, 0.0, gamma, duration)
    if gamma_target >= on_resonance:
        return 0.0

    big_l = -math.log1p(-gamma_target)
    ratio = gamma * duration / (2.0 * big_l) - 1.0
    delta = omega * math.sqrt(ratio) if ratio > 0 and math.isfinite(ratio) else math.nan

    if math.isfinite(delta):
        result = _nudge_to_target(omega, gamma, duration, gamma_target, angular_mhz_to_ghz(delta))
        if result is not None:
            return result

    # Bisection fallback on the monotone tail.
    lo, hi = 0.0, max(omega, 1.0)
    while transition_crosstalk(omega, hi, gamma, duration) > gamma_target:
        hi *= 2.0
        if hi > 1e30:
            raise UnsolvableError("no finite detuning reaches the target")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if transition_crosstalk(omega, mid, gamma, duration) > gamma_target:
            lo = mid
        else:
            hi = mid
    result = _nudge_to_target(omega, gamma, duration, gamma_target, angular_mhz_to_ghz(hi))
    if result is None:
        raise UnsolvableError("bisection failed to bracket the target")
    return result


def _nudge_to_target(omega, gamma, duration, gamma_target, delta_ghz):
    """Walk a candidate detuning up by ulps until it satisfies the target.

    The check happens in GHz, the unit callers get back, so the GHz ->
    rad/us round trip cannot re-round the result above the target.
    """
    for _ in range(64):
        value = transition_crosstalk(omega, ghz_to_angular_mhz(delta_ghz), gamma, duration)
        if value <= gamma_target:
            return delta_ghz
        delta_ghz = math.nextafter(delta_ghz, math.inf)
    return None


def calibrate_rabi(delta_ref_ghz, gamma_ref, gamma, duration) -> float:
    """Optical Rabi frequency (rad/us) from one (detuning, crosstalk) anchor.

    Inverts the single-transition probability for omega given a measured
    crosstalk ``gamma_ref`` at detuning ``delta_ref_ghz``:
    omega^2 = 2 * delta^2 * L / (gamma*T - 2L), L = -ln(1 - gamma_ref).
    """
    if not 0.0 < gamma_ref < 1.0:
        raise DomainError("gamma_ref must lie strictly between 0 and 1")
    if gamma < 0 or duration < 0:
        raise DomainError("gamma and duration must be non-negative")
    if delta_ref_ghz == 0.0:
        raise DegenerateInputError(
            "on-resonance anchor: the probability is independent of omega there"
        )
    big_l = -math.log1p(-gamma_ref)
    denom = gamma * duration - 2.0 * big_l
    if denom <= 0.0:
        raise UnsolvableError(
            "anchor not reachable: gamma*duration <= 2*(-ln(1-gamma_ref)), "
            "no Rabi frequency reproduces it"
        )
    delta = ghz_to_angular_mhz(abs(delta_ref_ghz))
    return math.sqrt(2.0 * delta * delta * big_l / denom)
