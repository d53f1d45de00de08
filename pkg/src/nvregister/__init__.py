"""Toolkit for spectrally multiplexed solid-state qubit registers.

Models readout-induced crosstalk between spectrally distinguishable
emitters in one confocal volume, simulates the pulse-sequence experiments
that measure it, fits excitation spectra and localization images, and
estimates register yield by Monte Carlo sampling from inhomogeneous
frequency distributions.
"""

__version__ = "0.1.0"

from .crosstalk import (
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
from .ensemble import (
    KernelDensityModel,
    ZplDataset,
    kde_fit,
    load_zpl_dataset,
    sample,
    sample_with_rng,
    summary_stats,
    surrogate_dataset,
)
from .errors import (
    ConvergenceError,
    DegenerateInputError,
    DomainError,
    ParseError,
    UnsolvableError,
)
from .fitting import (
    LocalizationResult,
    LorentzianFit,
    LorentzianPeak,
    PsfImage,
    Spectrum,
    fit_gaussian_psf,
    fit_lorentzian_sum,
    initialize_peaks,
    load_psf_image,
    load_spectrum,
)
from .sequences import (
    ClusterEmitter,
    ClusterSequenceSpec,
    SequenceEvent,
    load_cluster,
    run_cluster_sequence,
)
from .spin import (
    QubitState,
    ReadoutModel,
    SequenceResult,
    apply_crosstalk_channel,
    apply_rotation,
    estimate_crosstalk_from_contrast,
    free_precession,
    fringe_amplitude_ratio,
    ramsey_with_crosstalk,
)
from .units import GHZ_TO_ANGULAR_MHZ, angular_mhz_to_ghz, ghz_to_angular_mhz
from .yield_mc import (
    ReadoutPreset,
    YieldEstimate,
    cluster_viability,
    estimate_yield,
    msr_preset,
    ssr_preset,
    wilson_interval,
    yield_sweep,
)
