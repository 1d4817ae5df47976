"""
Sequence compilation, execution and the standard protocol generators.

compile_program: SequenceProgram + sweep assignment -> Timeline (integer-ns grid)
execute:         Timeline + SpinState -> final state + one SignalTrace per readout
run_sweep:       every sweep point, seeded shot noise, returned as a DataFrame
"""
from __future__ import annotations

import itertools
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator

from nvsim.audit import get_logger, log_event
from nvsim.dsl import POWER, Quantity, Repeat, SequenceProgram, Statement, Var, parse
from nvsim.dynamics import (
    DrivePulse,
    RelaxationParams,
    SignalTrace,
    SpinState,
    apply_decoherence,
    apply_laser,
    apply_mw_pulse,
    dbm_to_rabi,
    evolve_unitary,
    laser_ramp,
    readout_counts,
    relax_dark,
)
from nvsim.errors import SequenceCompileError, TimelineError
from nvsim.hamiltonian import NVParameters, build_hamiltonian
from nvsim.settings import get_settings

logger = get_logger("sequence")

TIMELINE_SCHEMA_VERSION = 1
MAX_EVENTS = 1_000_000


class CompileOptions(BaseModel):
    """How symbolic durations and amplitudes resolve into a timeline."""

    model_config = ConfigDict(frozen=True)

    rabi: Optional[float] = None  # default Rabi frequency for mw without `amp`
    reference_dbm: float = 30.0
    reference_rabi: float = 5e6
    max_duration: float = 1.0

    @field_validator("rabi")
    @classmethod
    def _positive_rabi(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not v > 0:
            raise ValueError(f"rabi must be > 0, got {v!r}")
        return v

    def default_rabi(self) -> float:
        return self.rabi if self.rabi is not None else get_settings().default_rabi


# ---------- Timeline ----------


@dataclass(frozen=True)
class Event:
    start_ns: int
    end_ns: int
    channel: str
    frequency: Optional[float] = None
    rabi: Optional[float] = None
    phase: float = 0.0
    role: Optional[str] = None
    echo: bool = False

    @property
    def start(self) -> float:
        return self.start_ns * 1e-9

    @property
    def end(self) -> float:
        return self.end_ns * 1e-9

    @property
    def duration(self) -> float:
        return (self.end_ns - self.start_ns) * 1e-9


@dataclass(frozen=True)
class Timeline:
    events: Tuple[Event, ...]
    total_ns: int

    def __post_init__(self) -> None:
        last_end: Dict[str, int] = {}
        for ev in self.events:
            if ev.start_ns < 0 or ev.end_ns < ev.start_ns:
                raise TimelineError(f"invalid event times [{ev.start_ns}, {ev.end_ns}] ns on {ev.channel}")
            if ev.end_ns > self.total_ns:
                raise TimelineError(f"event on {ev.channel} ends after the timeline ({ev.end_ns} > {self.total_ns} ns)")
            if ev.start_ns < last_end.get(ev.channel, 0):
                raise TimelineError(f"overlapping {ev.channel} events at {ev.start_ns} ns")
            last_end[ev.channel] = max(last_end.get(ev.channel, 0), ev.end_ns)
        starts = [ev.start_ns for ev in self.events]
        if starts != sorted(starts):
            raise TimelineError("timeline events must be sorted by start time")

    @property
    def total_duration(self) -> float:
        return self.total_ns * 1e-9

    def readouts(self) -> List[Event]:
        return [ev for ev in self.events if ev.channel == "readout"]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": TIMELINE_SCHEMA_VERSION,
            "total_duration_ns": self.total_ns,
            "events": [{k: v for k, v in asdict(ev).items() if v is not None} for ev in self.events],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Timeline":
        try:
            data = json.loads(text)
            events = tuple(Event(**ev) for ev in data["events"])
            return cls(events, int(data["total_duration_ns"]))
        except (KeyError, TypeError, json.JSONDecodeError) as e:
            raise TimelineError(f"malformed timeline JSON: {e}") from e


# ---------- Compile ----------


class _Compiler:
    def __init__(self, program: SequenceProgram, assignment: Mapping[str, float], options: CompileOptions):
        self.program = program
        self.assignment = dict(assignment)
        self.options = options
        self.snapped = 0

    def value(self, q: Quantity) -> float:
        if isinstance(q.value, Var):
            name = q.value.name
            if name not in self.assignment:
                raise SequenceCompileError(f"unassigned variable ${name} (line {q.value.line})")
            return float(self.assignment[name])
        return float(q.value)

    def rabi_of(self, st: Statement) -> float:
        if st.amplitude is None:
            return self.options.default_rabi()
        amp = self.value(st.amplitude)
        dim = st.amplitude.dimension
        if isinstance(st.amplitude.value, Var):
            dim = self.program.sweep(st.amplitude.value.name).dimension
        if dim == POWER:
            return dbm_to_rabi(amp, self.options.reference_dbm, self.options.reference_rabi)
        if amp < 0:
            raise SequenceCompileError(f"negative Rabi amplitude on line {st.line}")
        return amp

    def to_ns(self, seconds: float, st: Statement) -> int:
        if seconds < 0:
            raise SequenceCompileError(f"negative duration {seconds!r} s on line {st.line}")
        if seconds > self.options.max_duration:
            raise SequenceCompileError(
                f"duration {seconds!r} s on line {st.line} exceeds the maximum of {self.options.max_duration} s"
            )
        exact = seconds * 1e9
        ns = int(round(exact))
        if abs(exact - ns) > 1e-3:
            self.snapped += 1
            log_event(logger, "time_snapped", line=st.line, requested_ns=exact, snapped_ns=ns)
        return ns

    def statement(self, st: Statement, cursor: int) -> Event:
        if st.channel == "mw":
            rabi = self.rabi_of(st)
            if st.role is not None:
                if rabi <= 0:
                    raise SequenceCompileError(f"{st.role} pulse on line {st.line} needs a positive Rabi amplitude")
                seconds = 1.0 / (2.0 * rabi) if st.role == "pi" else 1.0 / (4.0 * rabi)
            else:
                seconds = self.value(st.duration)
            freq = self.value(st.frequency)
            if freq < 0:
                raise SequenceCompileError(f"negative frequency on line {st.line}")
            phase = self.value(st.phase) if st.phase is not None else 0.0
            ns = self.to_ns(seconds, st)
            return Event(cursor, cursor + ns, "mw", frequency=freq, rabi=rabi, phase=phase, role=st.role)
        ns = self.to_ns(self.value(st.duration), st)
        return Event(cursor, cursor + ns, st.channel, echo=st.echo)

    def block(self, nodes: Sequence[Any], cursor: int) -> Tuple[List[Event], int]:
        events: List[Event] = []
        for node in nodes:
            if isinstance(node, Repeat):
                body, end = self.block(node.body, 0)
                span = end
                if cursor + span * node.count > round(self.options.max_duration * 1e9):
                    raise SequenceCompileError(
                        f"repeat on line {node.line} overflows the maximum duration of {self.options.max_duration} s"
                    )
                if len(events) + len(body) * node.count > MAX_EVENTS:
                    raise SequenceCompileError(f"repeat on line {node.line} expands to more than {MAX_EVENTS} events")
                for k in range(node.count):
                    offset = cursor + k * span
                    events.extend(
                        Event(ev.start_ns + offset, ev.end_ns + offset, ev.channel, ev.frequency, ev.rabi, ev.phase, ev.role, ev.echo)
                        for ev in body
                    )
                cursor += span * node.count
            else:
                ev = self.statement(node, cursor)
                events.append(ev)
                cursor = ev.end_ns
            if cursor > round(self.options.max_duration * 1e9):
                raise SequenceCompileError(f"sequence exceeds the maximum duration of {self.options.max_duration} s")
        return events, cursor


def compile_program(
    program: SequenceProgram,
    assignment: Optional[Mapping[str, float]] = None,
    options: Optional[CompileOptions] = None,
) -> Timeline:
    """Lay statements out sequentially from t=0 on a 1 ns grid, expanding repeats."""
    compiler = _Compiler(program, assignment or {}, options or CompileOptions())
    missing = [v for v in program.variables() if v not in compiler.assignment]
    if missing:
        raise SequenceCompileError(f"unassigned sweep variable(s): {', '.join('$' + m for m in missing)}")
    events, total = compiler.block(program.statements, 0)
    return Timeline(tuple(events), total)


# ---------- Execute ----------


@dataclass(frozen=True)
class ExecutionResult:
    final: SpinState
    traces: Tuple[SignalTrace, ...]
    windows: Tuple[Tuple[float, float], ...]


def execute(
    timeline: Timeline,
    initial: SpinState,
    params: NVParameters,
    relax: RelaxationParams,
    mode: str = "rwa",
    dt: Optional[float] = None,
    laser_rise: float = 0.0,
) -> ExecutionResult:
    """
    Thread the state through every event in order:
    laser/readout -> optical pumping (readout records the emission trace),
    mw -> coherent drive, wait -> free evolution with T1/T2* (or echo) decay.
    Excited/singlet population decays back incoherently outside laser windows.
    """
    state = initial
    h0 = build_hamiltonian(params)
    optical = relax.optical
    traces: List[SignalTrace] = []
    windows: List[Tuple[float, float]] = []
    echo_elapsed = 0.0
    for ev in timeline.events:
        dur = ev.duration
        if ev.channel in ("laser", "readout"):
            profile = laser_ramp(dur, laser_rise) if laser_rise > 0 else None
            record = ev.channel == "readout"
            state, trace = apply_laser(state, optical, dur, dt, ev.start, profile, record)
            if record:
                traces.append(trace)
                windows.append((ev.start, ev.end))
            echo_elapsed = 0.0
        elif ev.channel == "mw":
            pulse = DrivePulse(carrier=ev.frequency, rabi=ev.rabi, duration=dur, phase=ev.phase)
            rho = apply_mw_pulse(state.rho, pulse, params, mode=mode, t_start=ev.start)
            state = relax_dark(state.with_rho(rho), optical, dur, dt)
        elif ev.channel == "wait":
            rho = evolve_unitary(state.rho, h0, dur)
            if ev.echo:
                rho = apply_decoherence(rho, dur, relax, dephasing="echo", elapsed=echo_elapsed)
                echo_elapsed += dur
            else:
                rho = apply_decoherence(rho, dur, relax)
            state = relax_dark(state.with_rho(rho), optical, dur, dt)
        else:
            raise TimelineError(f"unknown channel {ev.channel!r}")
    return ExecutionResult(state, tuple(traces), tuple(windows))


# ---------- Protocol generators ----------


def _t(seconds: float) -> str:
    return f"{float(seconds)!r}s"


def _f(hz: float) -> str:
    return f"{float(hz)!r}Hz"


def _sweep_line(var: str, rng: Sequence[float], fmt) -> str:
    if len(rng) != 3:
        raise SequenceCompileError(f"range must be (start, stop, points), got {rng!r}")
    start, stop, points = rng
    if int(points) < 2 or start == stop:
        raise SequenceCompileError(f"empty range for ${var}: {rng!r}")
    return f"sweep {var} {fmt(start)}:{fmt(stop)}:{int(points)}"


def _amp(rabi: Optional[float]) -> str:
    return f" amp {_f(rabi)}" if rabi is not None else ""


def cw_odmr(
    f_range: Sequence[float],
    rabi: float = 1e6,
    dwell: float = 2e-6,
    pump: float = 3e-6,
    readout: float = 300e-9,
) -> SequenceProgram:
    """Laser, a long weak microwave tone at the swept frequency, readout."""
    return parse(
        "\n".join(
            [
                _sweep_line("f", f_range, _f),
                f"laser {_t(pump)}",
                f"mw {_t(dwell)} @ $f{_amp(rabi)}",
                f"readout {_t(readout)}",
            ]
        )
    )


def pulsed_odmr(
    f_range: Sequence[float],
    rabi: Optional[float] = None,
    pump: float = 3e-6,
    readout: float = 300e-9,
) -> SequenceProgram:
    return parse(
        "\n".join(
            [
                _sweep_line("f", f_range, _f),
                f"laser {_t(pump)}",
                f"mw pi @ $f{_amp(rabi)}",
                f"readout {_t(readout)}",
            ]
        )
    )


def rabi(
    dur_range: Sequence[float],
    f: float,
    rabi: Optional[float] = None,
    pump: float = 3e-6,
    settle: float = 1e-6,
    readout: float = 300e-9,
) -> SequenceProgram:
    return parse(
        "\n".join(
            [
                _sweep_line("t", dur_range, _t),
                f"laser {_t(pump)}",
                f"wait {_t(settle)}",
                f"mw $t @ {_f(f)}{_amp(rabi)}",
                f"readout {_t(readout)}",
            ]
        )
    )


def ramsey_vs_time(
    tau_range: Sequence[float],
    f: float,
    rabi: Optional[float] = None,
    pump: float = 3e-6,
    settle: float = 1e-6,
    readout: float = 300e-9,
) -> SequenceProgram:
    return parse(
        "\n".join(
            [
                _sweep_line("tau", tau_range, _t),
                f"laser {_t(pump)}",
                f"wait {_t(settle)}",
                f"mw pi/2 @ {_f(f)}{_amp(rabi)}",
                "wait $tau",
                f"mw pi/2 @ {_f(f)}{_amp(rabi)}",
                f"readout {_t(readout)}",
            ]
        )
    )


def ramsey_vs_freq(
    f_range: Sequence[float],
    tau: float,
    rabi: Optional[float] = None,
    pump: float = 3e-6,
    settle: float = 1e-6,
    readout: float = 300e-9,
) -> SequenceProgram:
    return parse(
        "\n".join(
            [
                _sweep_line("f", f_range, _f),
                f"laser {_t(pump)}",
                f"wait {_t(settle)}",
                f"mw pi/2 @ $f{_amp(rabi)}",
                f"wait {_t(tau)}",
                f"mw pi/2 @ $f{_amp(rabi)}",
                f"readout {_t(readout)}",
            ]
        )
    )


def t1(
    tau_range: Sequence[float],
    pump: float = 3e-6,
    readout: float = 300e-9,
    tail: float = 2.7e-6,
) -> SequenceProgram:
    """Laser, dark wait, then a second laser pulse whose head is the readout window."""
    return parse(
        "\n".join(
            [
                _sweep_line("tau", tau_range, _t),
                f"laser {_t(pump)}",
                "wait $tau",
                f"readout {_t(readout)}",
                f"laser {_t(tail)}",
            ]
        )
    )


def hahn_echo(
    tau_range: Sequence[float],
    f: float,
    rabi: Optional[float] = None,
    pump: float = 3e-6,
    settle: float = 1e-6,
    readout: float = 300e-9,
) -> SequenceProgram:
    return parse(
        "\n".join(
            [
                _sweep_line("tau", tau_range, _t),
                f"laser {_t(pump)}",
                f"wait {_t(settle)}",
                f"mw pi/2 @ {_f(f)}{_amp(rabi)}",
                "wait $tau echo",
                f"mw pi @ {_f(f)}{_amp(rabi)}",
                "wait $tau echo",
                f"mw pi/2 @ {_f(f)}{_amp(rabi)}",
                f"readout {_t(readout)}",
            ]
        )
    )


PROTOCOLS = {
    "cw_odmr": cw_odmr,
    "pulsed_odmr": pulsed_odmr,
    "rabi": rabi,
    "ramsey_vs_time": ramsey_vs_time,
    "ramsey_vs_freq": ramsey_vs_freq,
    "t1": t1,
    "hahn_echo": hahn_echo,
}


# ---------- Sweep runner ----------


def sweep_points(program: SequenceProgram, overrides: Optional[Mapping[str, Sequence[float]]] = None) -> List[Dict[str, float]]:
    """Cartesian product of every sweep's values (overrides replace a sweep's grid)."""
    overrides = overrides or {}
    names = program.variables()
    grids = [list(overrides.get(s.variable, s.values())) for s in program.sweeps]
    if not names:
        return [{}]
    return [dict(zip(names, combo)) for combo in itertools.product(*grids)]


@dataclass(frozen=True)
class _PointJob:
    index: int
    assignment: Dict[str, float]
    program: SequenceProgram
    params: NVParameters
    relax: RelaxationParams
    options: CompileOptions
    initial: SpinState
    mode: str
    dt: Optional[float]
    laser_rise: float
    shots: int
    seed: np.random.SeedSequence


def _run_point(job: _PointJob) -> Dict[str, Any]:
    timeline = compile_program(job.program, job.assignment, job.options)
    result = execute(timeline, job.initial, job.params, job.relax, job.mode, job.dt, job.laser_rise)
    row: Dict[str, Any] = dict(job.assignment) if job.assignment else {"point": job.index}
    seeds = job.seed.spawn(len(result.traces))
    for k, (trace, window) in enumerate(zip(result.traces, result.windows)):
        counts = readout_counts(trace, window, job.shots, seeds[k])
        suffix = "" if k == 0 else f"_{k}"
        row[f"mean_counts{suffix}"] = counts.mean_counts
        row[f"sample_mean{suffix}"] = counts.sample_mean if job.shots else np.nan
    return row


def run_sweep(
    program: SequenceProgram,
    params: NVParameters,
    relax: RelaxationParams,
    shots: int = 0,
    seed: Optional[int] = None,
    options: Optional[CompileOptions] = None,
    initial: Optional[SpinState] = None,
    mode: str = "rwa",
    dt: Optional[float] = None,
    laser_rise: float = 0.0,
    overrides: Optional[Mapping[str, Sequence[float]]] = None,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Execute the program at every sweep point. Each point draws its shot noise from an
    independent child of SeedSequence(seed), so results do not depend on `workers`.
    """
    seed = get_settings().seed if seed is None else seed
    points = sweep_points(program, overrides)
    children = np.random.SeedSequence(seed).spawn(len(points))
    jobs = [
        _PointJob(
            i,
            a,
            program,
            params,
            relax,
            options or CompileOptions(),
            initial or SpinState.thermal(),
            mode,
            dt,
            laser_rise,
            shots,
            children[i],
        )
        for i, a in enumerate(points)
    ]
    log_event(logger, "sweep_start", points=len(jobs), shots=shots, seed=seed, workers=workers)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_point, jobs))
    else:
        rows = [_run_point(j) for j in jobs]
    log_event(logger, "sweep_done", points=len(rows))
    return pd.DataFrame(rows)
