"""Shared builders for multi-emitter sequence tests."""

import numpy as np

from nvregister.crosstalk import (
    DEFAULT_GAMMA_MHZ,
    DEFAULT_MSR_DURATION_US,
    EmitterOpticalModel,
    OpticalTransition,
    calibrate_rabi,
)
from nvregister.sequences import ClusterEmitter, ClusterSequenceSpec, SequenceEvent

BASE_FREQ_GHZ = 470_400.0
RABI_DRIVE_MHZ = 5.0
MW_DETUNING_MHZ = 2.0


def calibrated_omega():
    return calibrate_rabi(16.0, 0.01, DEFAULT_GAMMA_MHZ, DEFAULT_MSR_DURATION_US)


def make_emitter(label, offset_ghz, t2_star_ns=2000.0, mw_detuning_mhz=MW_DETUNING_MHZ):
    """Single-line emitter model offset from the readout laser frequency."""
    model = EmitterOpticalModel(
        label=label,
        transitions=(
            OpticalTransition(
                ground=0,
                excited="Ex",
                frequency_ghz=BASE_FREQ_GHZ + offset_ghz,
                rabi_mhz=calibrated_omega(),
                branching_mhz={0: DEFAULT_GAMMA_MHZ},
            ),
        ),
    )
    return ClusterEmitter(optical=model, t2_star_ns=t2_star_ns, mw_detuning_mhz=mw_detuning_mhz)


def interleaved_spec(tau_grid_ns, laser_duration_us=DEFAULT_MSR_DURATION_US,
                     spectators=("A", "B"), driven="C"):
    """Rabi drive on the driven emitter, read out resonantly mid-way through
    the spectators' Ramsey precession window."""
    timelines = {
        driven: (
            SequenceEvent.from_dict(
                {"t_ns": 0.0, "kind": "drive", "axis": "X",
                 "rabi_mhz": RABI_DRIVE_MHZ, "duration_ns": "tau"}
            ),
            SequenceEvent.from_dict(
                {"t_ns": "tau*1.5", "kind": "laser", "duration_us": laser_duration_us}
            ),
        )
    }
    for label in spectators:
        timelines[label] = (
            SequenceEvent.from_dict(
                {"t_ns": "tau", "kind": "rotation", "axis": "X", "angle_rad": np.pi / 2}
            ),
            SequenceEvent.from_dict({"t_ns": "tau", "kind": "precess", "duration_ns": "tau"}),
            SequenceEvent.from_dict(
                {"t_ns": "tau*2", "kind": "rotation", "axis": "X", "angle_rad": np.pi / 2}
            ),
            SequenceEvent.from_dict({"t_ns": "tau*2", "kind": "readout", "mode": "contrast"}),
        )
    return ClusterSequenceSpec(tau_grid_ns=np.asarray(tau_grid_ns, dtype=float),
                               timelines=timelines)
