"""Unit conventions and the single place frequency conversions live.

Interfaces quote optical frequencies and detunings in GHz, microwave
frequencies in MHz, optical pulse durations in microseconds, and gate/
precession times in nanoseconds. The crosstalk kernel works in angular
MHz (rad/us), so the one conversion that matters is

    1 GHz = 2*pi*1000 rad/us

Decay rates ("gamma") are plain rates in 1/us, numerically identical to
rad/us here.
"""

from __future__ import annotations

import math

# 1 GHz expressed in rad/us.
GHZ_TO_ANGULAR_MHZ = 2000.0 * math.pi


def ghz_to_angular_mhz(f_ghz):
    """Convert a frequency or detuning in GHz to rad/us."""
    return f_ghz * GHZ_TO_ANGULAR_MHZ


def angular_mhz_to_ghz(w):
    """Convert rad/us back to GHz."""
    return w / GHZ_TO_ANGULAR_MHZ
