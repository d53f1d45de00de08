"""Multi-emitter gate timelines with readout-laser crosstalk between them.

A cluster sequence is one ordered event timeline per emitter. Rotations,
coherent drives and precession intervals act on their own emitter; a
"laser" event performs resonant readout on its target emitter (recording
its population) and applies the off-resonant projection channel to every
other emitter, with each channel computed from that spectator's own
optical model and current ground-state populations.

Event times and interval durations may be swept: wherever a time in ns is
expected, a JSON value may be a number or a string linear in the sweep
variable, e.g. "tau", "tau*0.5", "200+tau". Events are applied in global
start-time order (ties broken by cluster order, then timeline order).
Because the projection channel commutes exactly with precession, applying
a laser at its start time is equivalent to applying it anywhere inside a
spectator's precession window.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .crosstalk import EmitterOpticalModel, ReadoutPulse, emitter_crosstalk
from .errors import DomainError
from .spin import (
    DEFAULT_T2_STAR_NS,
    QubitState,
    ReadoutModel,
    SequenceResult,
    apply_crosstalk_channel,
    apply_rotation,
    free_precession,
)

EVENT_KINDS = ("rotation", "drive", "precess", "laser", "readout")
READOUT_MODES = ("contrast", "population")

TimeExpr = tuple[float, float]  # value(tau) = const + coeff * tau


def parse_time_expr(value) -> TimeExpr:
    """Parse a number or 'const + coeff*tau' string into (const, coeff)."""
    if isinstance(value, bool):
        raise DomainError(f"bad time expression {value!r}")
    if isinstance(value, (int, float)):
        return (float(value), 0.0)
    if isinstance(value, str):
        const = 0.0
        coeff = 0.0
        for term in value.replace(" ", "").split("+"):
            if not term:
                raise DomainError(f"bad time expression {value!r}")
            if "tau" in term:
                parts = term.split("*")
                if parts == ["tau"]:
                    coeff += 1.0
                elif len(parts) == 2 and parts.count("tau") == 1:
                    other = parts[0] if parts[1] == "tau" else parts[1]
                    try:
                        coeff += float(other)
                    except ValueError as exc:
                        raise DomainError(f"bad time expression {value!r}") from exc
                else:
                    raise DomainError(f"bad time expression {value!r}")
            else:
                try:
                    const += float(term)
                except ValueError as exc:
                    raise DomainError(f"bad time expression {value!r}") from exc
        return (const, coeff)
    raise DomainError(f"bad time expression {value!r}")


def resolve_time(expr: TimeExpr, tau: float) -> float:
    return expr[0] + expr[1] * tau


def _format_time_expr(expr: TimeExpr):
    const, coeff = expr
    if coeff == 0.0:
        return const
    parts = []
    if const != 0.0:
        parts.append(repr(const))
    parts.append("tau" if coeff == 1.0 else f"tau*{coeff!r}")
    return "+".join(parts)


@dataclass(frozen=True)
class SequenceEvent:
    """One timeline entry; only the fields relevant to ``kind`` are used."""

    t_ns: TimeExpr
    kind: str
    axis: str = "X"
    angle_rad: float = 0.0
    rabi_mhz: float = 0.0
    duration_ns: TimeExpr = (0.0, 0.0)
    duration_us: float = 0.0
    detuning_mhz: float | None = None
    target: str | None = None
    frequency_ghz: float | None = None
    mode: str = "contrast"

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise DomainError(f"unknown event kind {self.kind!r}")
        if self.kind in ("rotation", "drive") and self.axis.lower() not in ("x", "y", "z"):
            raise DomainError(f"unknown rotation axis {self.axis!r}")
        if self.kind == "drive" and self.rabi_mhz < 0:
            raise DomainError("drive rabi frequency must be non-negative")
        if self.kind == "laser" and self.duration_us < 0:
            raise DomainError("laser duration must be non-negative")
        if self.kind == "readout" and self.mode not in READOUT_MODES:
            raise DomainError(f"unknown readout mode {self.mode!r}")

    def occupied_ns(self, tau: float) -> float:
        """Interval length this event occupies on its own timeline, ns."""
        if self.kind in ("drive", "precess"):
            return resolve_time(self.duration_ns, tau)
        if self.kind == "laser":
            return self.duration_us * 1000.0
        return 0.0

    @classmethod
    def from_dict(cls, doc: dict) -> "SequenceEvent":
        kind = doc.get("kind")
        if kind not in EVENT_KINDS:
            raise DomainError(f"unknown event kind {kind!r}")
        kwargs = {"t_ns": parse_time_expr(doc.get("t_ns", 0.0)), "kind": kind}
        if kind == "rotation":
            if "angle_rad" not in doc:
                raise DomainError("rotation event needs angle_rad")
            kwargs["axis"] = str(doc.get("axis", "X"))
            kwargs["angle_rad"] = float(doc["angle_rad"])
        elif kind == "drive":
            if "rabi_mhz" not in doc or "duration_ns" not in doc:
                raise DomainError("drive event needs rabi_mhz and duration_ns")
            kwargs["axis"] = str(doc.get("axis", "X"))
            kwargs["rabi_mhz"] = float(doc["rabi_mhz"])
            kwargs["duration_ns"] = parse_time_expr(doc["duration_ns"])
        elif kind == "precess":
            if "duration_ns" not in doc:
                raise DomainError("precess event needs duration_ns")
            kwargs["duration_ns"] = parse_time_expr(doc["duration_ns"])
            if doc.get("detuning_mhz") is not None:
                kwargs["detuning_mhz"] = float(doc["detuning_mhz"])
        elif kind == "laser":
            if "duration_us" not in doc:
                raise DomainError("laser event needs duration_us")
            kwargs["duration_us"] = float(doc["duration_us"])
            if doc.get("target") is not None:
                kwargs["target"] = str(doc["target"])
            if doc.get("frequency_ghz") is not None:
                kwargs["frequency_ghz"] = float(doc["frequency_ghz"])
        elif kind == "readout":
            kwargs["mode"] = str(doc.get("mode", "contrast"))
        return cls(**kwargs)

    def to_dict(self) -> dict:
        doc = {"t_ns": _format_time_expr(self.t_ns), "kind": self.kind}
        if self.kind == "rotation":
            doc.update(axis=self.axis, angle_rad=self.angle_rad)
        elif self.kind == "drive":
            doc.update(
                axis=self.axis,
                rabi_mhz=self.rabi_mhz,
                duration_ns=_format_time_expr(self.duration_ns),
            )
        elif self.kind == "precess":
            doc["duration_ns"] = _format_time_expr(self.duration_ns)
            if self.detuning_mhz is not None:
                doc["detuning_mhz"] = self.detuning_mhz
        elif self.kind == "laser":
            doc["duration_us"] = self.duration_us
            if self.target is not None:
                doc["target"] = self.target
            if self.frequency_ghz is not None:
                doc["frequency_ghz"] = self.frequency_ghz
        elif self.kind == "readout":
            doc["mode"] = self.mode
        return doc


@dataclass(frozen=True)
class ClusterEmitter:
    """Optical model plus the spin parameters a sequence needs."""

    optical: EmitterOpticalModel
    t2_star_ns: float = DEFAULT_T2_STAR_NS
    mw_detuning_mhz: float = 0.0

    def __post_init__(self):
        if self.t2_star_ns <= 0:
            raise DomainError("t2_star must be positive")

    @property
    def label(self) -> str:
        return self.optical.label

    @classmethod
    def from_dict(cls, doc: dict) -> "ClusterEmitter":
        optical = EmitterOpticalModel.from_dict(doc)
        return cls(
            optical=optical,
            t2_star_ns=float(doc.get("t2_star_ns", DEFAULT_T2_STAR_NS)),
            mw_detuning_mhz=float(doc.get("mw_detuning_mhz", 0.0)),
        )

    def to_dict(self) -> dict:
        doc = self.optical.to_dict()
        doc["t2_star_ns"] = self.t2_star_ns
        doc["mw_detuning_mhz"] = self.mw_detuning_mhz
        return doc


def load_cluster(doc) -> list[ClusterEmitter]:
    """Read a cluster from a parsed JSON document (list or {"emitters": []})."""
    entries = doc["emitters"] if isinstance(doc, dict) else doc
    emitters = [ClusterEmitter.from_dict(e) for e in entries]
    labels = [e.label for e in emitters]
    if len(set(labels)) != len(labels):
        raise DomainError("emitter labels must be unique within a cluster")
    return emitters


@dataclass(frozen=True)
class ClusterSequenceSpec:
    """Sweep grid plus one ordered event timeline per emitter label."""

    tau_grid_ns: np.ndarray
    timelines: dict[str, tuple[SequenceEvent, ...]] = field(default_factory=dict)

    def __post_init__(self):
        taus = np.asarray(self.tau_grid_ns, dtype=float)
        if taus.ndim != 1 or taus.size == 0:
            raise DomainError("tau grid must be a non-empty 1-d sequence")
        if taus.min() < 0 or np.any(np.diff(taus) < 0):
            raise DomainError("tau grid must be non-negative and ascending")
        taus.setflags(write=False)
        object.__setattr__(self, "tau_grid_ns", taus)
        object.__setattr__(
            self, "timelines", {k: tuple(v) for k, v in self.timelines.items()}
        )

    @classmethod
    def from_dict(cls, doc: dict) -> "ClusterSequenceSpec":
        timelines = {
            str(label): tuple(SequenceEvent.from_dict(e) for e in events)
            for label, events in doc["emitters"].items()
        }
        return cls(tau_grid_ns=np.asarray(doc["tau_grid_ns"], dtype=float), timelines=timelines)

    @classmethod
    def from_json(cls, text: str) -> "ClusterSequenceSpec":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "tau_grid_ns": [float(t) for t in self.tau_grid_ns],
            "emitters": {
                label: [e.to_dict() for e in events]
                for label, events in self.timelines.items()
            },
        }

    def without_lasers(self) -> "ClusterSequenceSpec":
        """The same sequence with every laser event removed (reference run)."""
        stripped = {
            label: tuple(e for e in events if e.kind != "laser")
            for label, events in self.timelines.items()
        }
        return replace(self, timelines={k: v for k, v in stripped.items() if v})


def _default_laser_frequency(model: EmitterOpticalModel) -> float:
    """Frequency the readout laser parks on: the m_s=0 Ex line if present."""
    for tr in model.transitions:
        if tr.ground == 0 and tr.excited == "Ex":
            return tr.frequency_ghz
    return model.transitions[0].frequency_ghz


def _recording_plan(cluster_labels, spec):
    """Map each recorded emitter to its recording event and analysis pulse.

    Returns (recorders, flips): ``recorders[label] = (timeline, index, mode)``
    where mode is "laser", "contrast" or "population"; ``flips`` is the set
    of (timeline, index) rotation events that become 3pi/2 in the second
    pass of a contrast readout.
    """
    recorders: dict[str, tuple[str, int, str]] = {}
    flips: set[tuple[str, int]] = set()
    for timeline, events in spec.timelines.items():
        if timeline not in cluster_labels:
            raise DomainError(f"sequence references unknown emitter {timeline!r}")
        for idx, ev in enumerate(events):
            if ev.kind == "laser":
                target = ev.target if ev.target is not None else timeline
                if target not in cluster_labels:
                    raise DomainError(f"laser targets unknown emitter {target!r}")
                if target in recorders:
                    raise DomainError(f"emitter {target!r} is recorded more than once")
                recorders[target] = (timeline, idx, "laser")
            elif ev.kind == "readout":
                if timeline in recorders:
                    raise DomainError(f"emitter {timeline!r} is recorded more than once")
                recorders[timeline] = (timeline, idx, ev.mode)
                if ev.mode == "contrast":
                    analysis = None
                    for j in range(idx - 1, -1, -1):
                        if events[j].kind == "rotation":
                            analysis = j
                            break
                    if analysis is None:
                        raise DomainError(
                            f"contrast readout on {timeline!r} needs a preceding rotation"
                        )
                    flips.add((timeline, analysis))
    return recorders, flips


def _ordered_events(cluster, spec, tau):
    """Resolve timestamps at one tau, check per-emitter overlap, global sort."""
    order = {em.label: pos for pos, em in enumerate(cluster)}
    merged = []
    for timeline, events in spec.timelines.items():
        cursor = -math.inf
        for idx, ev in enumerate(events):
            start = resolve_time(ev.t_ns, tau)
            if start < 0:
                raise DomainError(f"event on {timeline!r} starts before t=0 at tau={tau}")
            if start < cursor - 1e-9:
                raise DomainError(
                    f"overlapping events on {timeline!r} at tau={tau} "
                    f"(event {idx} starts at {start} before {cursor})"
                )
            cursor = max(cursor, start + ev.occupied_ns(tau))
            merged.append((start, order[timeline], idx, timeline, ev))
    merged.sort(key=lambda item: item[:3])
    return merged


def _run_pass(cluster, spec, tau, flips, flip_active, readout):
    """One full timeline execution; returns (F, p1) per recorded emitter."""
    by_label = {em.label: em for em in cluster}
    states = {em.label: QubitState.ground() for em in cluster}
    recorded: dict[str, tuple[float, float]] = {}

    for _, _, idx, timeline, ev in _ordered_events(cluster, spec, tau):
        emitter = by_label[timeline]
        if ev.kind == "rotation":
            angle = ev.angle_rad
            if flip_active and (timeline, idx) in flips:
                angle += math.pi
            states[timeline] = apply_rotation(states[timeline], ev.axis, angle)
        elif ev.kind == "drive":
            duration = resolve_time(ev.duration_ns, tau)
            if duration < 0:
                raise DomainError(f"negative drive duration on {timeline!r}")
            angle = 2.0 * math.pi * ev.rabi_mhz * duration * 1e-3
            states[timeline] = apply_rotation(states[timeline], ev.axis, angle)
        elif ev.kind == "precess":
            duration = resolve_time(ev.duration_ns, tau)
            detuning = (
                ev.detuning_mhz if ev.detuning_mhz is not None else emitter.mw_detuning_mhz
            )
            states[timeline] = free_precession(
                states[timeline], detuning, duration, emitter.t2_star_ns
            )
        elif ev.kind == "laser":
            target = ev.target if ev.target is not None else timeline
            freq = (
                ev.frequency_ghz
                if ev.frequency_ghz is not None
                else _default_laser_frequency(by_label[target].optical)
            )
            pulse = ReadoutPulse(laser_frequency_ghz=freq, duration_us=ev.duration_us)
            tstate = states[target]
            recorded[target] = (readout.fluorescence(tstate.p0, tstate.p1), tstate.p1)
            for label, state in states.items():
                breakdown = emitter_crosstalk(
                    by_label[label].optical, pulse, state.populations()
                )
                states[label] = apply_crosstalk_channel(state, breakdown)
        elif ev.kind == "readout":
            state = states[timeline]
            recorded[timeline] = (readout.fluorescence(state.p0, state.p1), state.p1)
    return recorded


def run_cluster_sequence(
    cluster,
    spec: ClusterSequenceSpec,
    readout: ReadoutModel | None = None,
) -> dict[str, SequenceResult]:
    """Execute a cluster sequence over its sweep grid.

    Returns one SequenceResult per recorded emitter: contrast fringes for
    emitters ending in a contrast readout (the run is repeated with the
    analysis pulse advanced by pi to form the 3pi/2 branch), and |1>
    populations for emitters recorded by a resonant laser or a
    population-mode readout.
    """
    readout = readout or ReadoutModel()
    cluster = list(cluster)
    labels = [em.label for em in cluster]
    if len(set(labels)) != len(labels):
        raise DomainError("emitter labels must be unique within a cluster")
    recorders, flips = _recording_plan(set(labels), spec)

    taus = spec.tau_grid_ns
    needs_flip_pass = any(mode == "contrast" for _, _, mode in recorders.values())
    columns = {label: ([], [], []) for label in recorders}  # contrast, f_pi2, f_3pi2

    for tau in taus:
        pass_a = _run_pass(cluster, spec, float(tau), flips, False, readout)
        pass_b = (
            _run_pass(cluster, spec, float(tau), flips, True, readout)
            if needs_flip_pass
            else pass_a
        )
        for label, (_, _, mode) in recorders.items():
            if mode == "contrast":
                f_pi2 = pass_a[label][0]
                f_3pi2 = pass_b[label][0]
                denom = f_3pi2 + f_pi2
                if denom == 0.0:
                    raise DomainError(f"zero total fluorescence for {label!r}")
                value = (f_3pi2 - f_pi2) / denom
            else:
                f_pi2 = f_3pi2 = pass_a[label][0]
                value = pass_a[label][1]
            cols = columns[label]
            cols[0].append(value)
            cols[1].append(f_pi2)
            cols[2].append(f_3pi2)

    results = {}
    for label, (_, _, mode) in recorders.items():
        cols = columns[label]
        results[label] = SequenceResult(
            tau_ns=taus,
            contrast=np.array(cols[0]),
            f_pi2=np.array(cols[1]),
            f_3pi2=np.array(cols[2]),
            observable="contrast" if mode == "contrast" else "population",
        )
    return results
