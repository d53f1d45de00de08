"""Qubit-subspace spin dynamics: gates, dephasing, and the projection channel.

The spin-1 ground triplet is reduced to the {m_s=0, m_s=+1} qubit. A
readout laser aimed elsewhere acts on this qubit as a probabilistic
projection: with probability ``1 - total`` the state is untouched, and
with probability ``total`` it is replaced by a ground-state mixture set
by the decay branches. Branches into m_s=-1 leave the qubit subspace;
they are booked into the |0> population for fluorescence purposes and
tracked separately in ``QubitState.leak``.

All operations are pure and return new states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .crosstalk import CrosstalkBreakdown
from .errors import DegenerateInputError, DomainError

DEFAULT_T2_STAR_NS = 2000.0

_SIGMA = {
    "x": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}


@dataclass(frozen=True)
class ReadoutModel:
    """Linear fluorescence map F = bright*p0 + dim*p1.

    The absolute scale is hardware dependent; defaults (1.0, 0.7) give a
    contrast consistent with green-readout experiments. Contrast ratios
    do not depend on the chosen values.
    """

    bright: float = 1.0
    dim: float = 0.7

    def fluorescence(self, p0: float, p1: float) -> float:
        return self.bright * p0 + self.dim * p1


@dataclass(frozen=True)
class QubitState:
    """2x2 density matrix over {|0>=|m_s=0>, |1>=|m_s=+1>}.

    ``leak`` is the population that decayed into m_s=-1; it is included
    inside rho[0,0] (dark-equivalent for fringe readout) but reported
    separately. The array is copied and frozen on construction.
    """

    rho: np.ndarray
    leak: float = 0.0

    def __post_init__(self):
        rho = np.array(self.rho, dtype=complex)
        if rho.shape != (2, 2):
            raise DomainError("density matrix must be 2x2")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)
        if not -1e-12 <= self.leak <= 1.0 + 1e-12:
            raise DomainError("leaked population must lie in [0, 1]")

    @classmethod
    def ground(cls) -> "QubitState":
        return cls(np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex))

    @property
    def p0(self) -> float:
        return float(self.rho[0, 0].real)

    @property
    def p1(self) -> float:
        return float(self.rho[1, 1].real)

    @property
    def coherence(self) -> complex:
        return complex(self.rho[0, 1])

    def populations(self) -> dict[int, float]:
        """Ground-sublevel populations {-1, 0, +1}, leak split back out.

        Clamped to [0, 1] so downstream probability checks are not tripped
        by last-ulp rounding.
        """
        p_minus = min(max(self.leak, 0.0), 1.0)
        p0 = min(max(self.p0 - p_minus, 0.0), 1.0)
        p1 = min(max(self.p1, 0.0), 1.0)
        return {-1: p_minus, 0: p0, 1: p1}

    def validate(self, atol: float = 1e-9) -> None:
        """Raise DomainError unless Hermitian, unit trace and PSD within atol."""
        rho = self.rho
        if not np.allclose(rho, rho.conj().T, atol=atol, rtol=0):
            raise DomainError("density matrix is not Hermitian")
        if abs(rho.trace().real - 1.0) > atol or abs(rho.trace().imag) > atol:
            raise DomainError("density matrix trace is not 1")
        eig = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
        if eig.min() < -atol:
            raise DomainError("density matrix has a negative eigenvalue")


def rotation_matrix(axis: str, angle: float) -> np.ndarray:
    """SU(2) rotation exp(-i*angle/2 * sigma_axis)."""
    key = axis.lower()
    if key not in _SIGMA:
        raise DomainError(f"unknown rotation axis {axis!r}")
    half = 0.5 * angle
    return math.cos(half) * np.eye(2, dtype=complex) - 1.0j * math.sin(half) * _SIGMA[key]


def apply_rotation(state: QubitState, axis: str, angle: float) -> QubitState:
    """Unitary rotation of the qubit about X, Y or Z."""
    u = rotation_matrix(axis, angle)
    return QubitState(u @ state.rho @ u.conj().T, leak=state.leak)


def free_precession(
    state: QubitState,
    detuning_mhz: float,
    tau_ns: float,
    t2_star_ns: float | None = None,
) -> QubitState:
    """Free evolution for ``tau_ns`` at a microwave detuning (MHz).

    The coherence advances by phase 2*pi*detuning*tau and, when a T2* is
    given, shrinks by the Gaussian envelope exp(-(tau/T2*)^2). Populations
    are untouched.
    """
    if tau_ns < 0:
        raise DomainError("precession time must be non-negative")
    phase = 2.0 * math.pi * detuning_mhz * tau_ns * 1e-3
    env = 1.0
    if t2_star_ns is not None:
        if t2_star_ns <= 0:
            raise DomainError("t2_star must be positive when given")
        env = math.exp(-((tau_ns / t2_star_ns) ** 2))
    factor = env * complex(math.cos(phase), math.sin(phase))
    rho = np.array(state.rho)
    rho[0, 1] *= factor
    rho[1, 0] = rho[0, 1].conjugate()
    return QubitState(rho, leak=state.leak)


def apply_crosstalk_channel(state: QubitState, breakdown: CrosstalkBreakdown) -> QubitState:
    """Probabilistic projection by an off-resonant readout laser.

    rho -> (1 - total)*rho + sum_j p_j |j><j| with the branch weights from
    the breakdown. Off-diagonals scale by exactly (1 - total); the trace is
    preserved. Branches into m_s=-1 feed ``leak`` and the |0> population.
    """
    total = breakdown.total
    if not 0.0 <= total <= 1.0:
        raise DomainError("breakdown total must lie in [0, 1]")
    if total == 0.0:
        return state
    branches = breakdown.branch_populations()
    rho = (1.0 - total) * np.array(state.rho)
    rho[0, 0] += branches.get(0, 0.0) + branches.get(-1, 0.0)
    rho[1, 1] += branches.get(1, 0.0)
    leak = (1.0 - total) * state.leak + branches.get(-1, 0.0)
    return QubitState(rho, leak=leak)


@dataclass(frozen=True)
class SequenceResult:
    """Swept pulse-sequence observables for one emitter.

    ``observable`` is "contrast" for Ramsey-type readout (the ``contrast``
    column holds C = (F_3pi/2 - F_pi/2)/(F_3pi/2 + F_pi/2)) or
    "population" for directly recorded readout, in which case the column
    holds the |1> population and both raw columns carry the same F.
    """

    tau_ns: np.ndarray
    contrast: np.ndarray
    f_pi2: np.ndarray
    f_3pi2: np.ndarray
    observable: str = "contrast"

    def __post_init__(self):
        arrays = {}
        for name in ("tau_ns", "contrast", "f_pi2", "f_3pi2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        n = arrays["tau_ns"].size
        if any(a.size != n for a in arrays.values()):
            raise DomainError("result columns must have equal length")
        c = arrays["contrast"]
        if c.size and (c.min() < -1.0 - 1e-9 or c.max() > 1.0 + 1e-9):
            raise DomainError("contrast must lie in [-1, 1]")

    def rows(self):
        return zip(self.tau_ns, self.contrast, self.f_pi2, self.f_3pi2)


def write_sequence_csv(path, result: SequenceResult, metadata: dict | None = None) -> None:
    """Emit a SequenceResult as CSV with optional '# key=value' header lines."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if metadata:
            for key, value in metadata.items():
                fh.write(f"# {key}={value}\n")
        fh.write("tau_ns,contrast,f_pi2,f_3pi2\n")
        for tau, c, fp, f3 in result.rows():
            fh.write(f"{float(tau)!r},{float(c)!r},{float(fp)!r},{float(f3)!r}\n")


def _contrast_pair(state: QubitState, readout: ReadoutModel) -> tuple[float, float, float]:
    """Fluorescence for final pi/2 and 3pi/2 analysis pulses, plus contrast."""
    f_vals = []
    for angle in (0.5 * math.pi, 1.5 * math.pi):
        final = apply_rotation(state, "x", angle)
        f_vals.append(readout.fluorescence(final.p0, final.p1))
    f_pi2, f_3pi2 = f_vals
    denom = f_3pi2 + f_pi2
    if denom == 0.0:
        raise DegenerateInputError("zero total fluorescence in contrast readout")
    return f_pi2, f_3pi2, (f_3pi2 - f_pi2) / denom


def ramsey_with_crosstalk(
    detuning_mhz: float,
    tau_grid_ns,
    t2_star_ns: float | None = DEFAULT_T2_STAR_NS,
    breakdown: CrosstalkBreakdown | None = None,
    readout: ReadoutModel | None = None,
) -> SequenceResult:
    """Ramsey fringes with an optional readout-laser projection applied.

    For every tau: pi/2 pulse, free precession, the projection channel
    when a breakdown is given, then the pi/2 / 3pi/2 analysis pair. The
    channel commutes exactly with the precession phase and envelope, so
    applying it once after the full interval is equivalent to applying it
    at the pulse's actual position inside the interval. The fringe
    amplitude scales by exactly (1 - total) relative to the no-laser case.
    """
    readout = readout or ReadoutModel()
    taus = np.asarray(tau_grid_ns, dtype=float)
    if taus.ndim != 1 or taus.size == 0:
        raise DomainError("tau grid must be a non-empty 1-d sequence")
    if taus.min() < 0 or np.any(np.diff(taus) < 0):
        raise DomainError("tau grid must be non-negative and ascending")

    f_pi2 = np.empty_like(taus)
    f_3pi2 = np.empty_like(taus)
    contrast = np.empty_like(taus)
    for idx, tau in enumerate(taus):
        state = apply_rotation(QubitState.ground(), "x", 0.5 * math.pi)
        state = free_precession(state, detuning_mhz, float(tau), t2_star_ns)
        if breakdown is not None:
            state = apply_crosstalk_channel(state, breakdown)
        f_pi2[idx], f_3pi2[idx], contrast[idx] = _contrast_pair(state, readout)
    return SequenceResult(taus, contrast, f_pi2, f_3pi2)


def estimate_crosstalk_from_contrast(contrast_at_tau: float, reference_contrast_at_tau: float) -> float:
    """Crosstalk probability from a contrast ratio: 1 - C/C_ref, clamped to [0, 1]."""
    if reference_contrast_at_tau == 0.0:
        raise DegenerateInputError("reference contrast is zero")
    value = 1.0 - contrast_at_tau / reference_contrast_at_tau
    return min(max(value, 0.0), 1.0)


def fringe_amplitude_ratio(contrast, reference_contrast) -> float:
    """Least-squares amplitude of one fringe measured against a reference.

    Returns argmin_a sum((contrast - a*reference)^2); exact when the two
    curves are proportional, which is the analytic no-noise case.
    """
    c = np.asarray(contrast, dtype=float)
    r = np.asarray(reference_contrast, dtype=float)
    if c.shape != r.shape:
        raise DomainError("fringe and reference must have the same shape")
    denom = float(np.dot(r, r))
    if denom == 0.0:
        raise DegenerateInputError("reference fringe is identically zero")
    return float(np.dot(c, r) / denom)
