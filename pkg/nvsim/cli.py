from __future__ import annotations

import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click
import numpy as np
import pandas as pd
import typer

from nvsim.analysis import FitResult, fit_auto, get_model
from nvsim.audit import audited
from nvsim.config import RunConfig, load_run_config
from nvsim.dsl import SequenceProgram, parse_file, parse_quantity, parse_range
from nvsim.errors import ConfigError, InvalidParameterError, NVSimError, SequenceSyntaxError
from nvsim.exports import atomic_write, emit, frame_to_csv, schema_json, summary_path, summary_to_json
from nvsim.hamiltonian import (
    NVParameters,
    bulk_orientations,
    count_resolved_dips,
    odmr_spectrum,
    powder_spectrum,
    transitions_for,
)
from nvsim.resonator import (
    bandwidth_and_q,
    capacitance_for_frequency,
    circular_loop,
    feed_network,
    field_metrics,
    grid,
    load_geometry,
    loop_current,
    loop_field_map,
    make_design,
    reflection_coefficient,
    series_resistance_for_bandwidth,
)
from nvsim.sequence import (
    CompileOptions,
    compile_program,
    hahn_echo,
    rabi as rabi_protocol,
    ramsey_vs_freq,
    ramsey_vs_time,
    run_sweep,
    sweep_points,
    t1 as t1_protocol,
)
from nvsim.sgi import make_profile, nd_from_atoms, simulate_interferometer, symmetric_profile
from nvsim.validation import load_fit_data

app = typer.Typer(
    add_completion=False,
    no_args_is_help=True,
    help="NV-center spin simulator: ODMR, pulsed protocols, fitting, SGI and resonator design.",
)

# ---------- Utils ----------


def _schema_callback(ctx: typer.Context, value: bool) -> None:
    if value and not ctx.resilient_parsing:
        typer.echo(schema_json(ctx.info_name or ""), nl=False)
        raise typer.Exit()


def _quantity(text: str, dimension: str, flag: str) -> float:
    try:
        return parse_quantity(text, dimension)
    except SequenceSyntaxError as e:
        raise typer.BadParameter(e.message, param_hint=flag) from e


def _maybe_quantity(text: Optional[str], dimension: str, flag: str) -> Optional[float]:
    return None if text is None else _quantity(text, dimension, flag)


def _vector(text: Optional[str], flag: str) -> Optional[Tuple[float, float, float]]:
    if text is None:
        return None
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError as e:
        raise typer.BadParameter(f"expected three comma-separated numbers, got {text!r}", param_hint=flag) from e
    if len(parts) != 3:
        raise typer.BadParameter(f"expected three comma-separated numbers, got {text!r}", param_hint=flag)
    return parts  # type: ignore[return-value]


def _config(path: Optional[str], **flags: Any) -> RunConfig:
    return load_run_config(path, flags)


def _write(cfg: RunConfig, command: str, params: Dict[str, Any], frame: pd.DataFrame, results: Dict[str, Any]) -> None:
    """CSV + companion summary, or one JSON document holding both."""
    parameters = {**cfg.summary(), **params}
    if cfg.format == "json":
        data = {c: frame[c].tolist() for c in frame.columns}
        emit(summary_to_json(command, parameters, {**results, "data": data}), cfg.output)
        return
    emit(frame_to_csv(frame), cfg.output)
    side = summary_path(cfg.output)
    if side:
        atomic_write(side, summary_to_json(command, parameters, results))


def _resonance(params: NVParameters, m_s: int = -1) -> float:
    """|0, m_I=0> -> |m_s, m_I=0> line."""
    try:
        return transitions_for(params).find((0, 0), (m_s, 0)).frequency
    except KeyError as e:
        raise InvalidParameterError(f"no |0,0> -> |{m_s},0> transition for this field; pass --frequency") from e


def _signal(frame: pd.DataFrame) -> np.ndarray:
    return frame["sample_mean"].to_numpy(dtype=float)


def _sweep(cfg: RunConfig, program: SequenceProgram, overrides: Optional[Dict[str, Sequence[float]]] = None) -> pd.DataFrame:
    return run_sweep(
        program,
        cfg.nv_parameters(),
        cfg.relaxation(),
        shots=cfg.shots,
        seed=cfg.effective_seed,
        options=CompileOptions(rabi=cfg.rabi),
        mode=cfg.mode,
        overrides=overrides,
        workers=cfg.workers,
    )


def _drive_frequency(cfg: RunConfig, frequency: Optional[str], detuning: str) -> float:
    explicit = _maybe_quantity(frequency, "frequency", "--frequency")
    if explicit is not None:
        return explicit
    return _resonance(cfg.nv_parameters()) + parse_quantity(detuning, "frequency")


def _fit(model_spec: str, x: np.ndarray, y: np.ndarray, weighting: Optional[str] = None) -> FitResult:
    return fit_auto(get_model(model_spec), x, y, weighting)


# common options
_CONFIG = typer.Option(None, "--config", help="JSON or YAML run configuration (flat keys).")
_SEED = typer.Option(None, "--seed", help="RNG seed (default: NVSIM_SEED, else 0).")
_SHOTS = typer.Option(None, "--shots", help="Shots per sweep point (>= 1).")
_FORMAT = typer.Option(None, "--format", help="csv (data + <output>.summary.json) or json.")
_OUTPUT = typer.Option(None, "--output", "-o", help="Output path (default: stdout).")
_WORKERS = typer.Option(None, "--workers", help="Parallel worker processes / threads.")
_SCHEMA = typer.Option(
    False, "--schema", is_eager=True, expose_value=False, callback=_schema_callback, help="Print the output schema and exit."
)
_B_FIELD = typer.Option(None, "--b-field", help="Lab-frame field Bx,By,Bz in tesla.")
_RABI = typer.Option(None, "--rabi", help="Rabi frequency, e.g. 5MHz.")
_FREQUENCY = typer.Option(None, "--frequency", help="Drive frequency (default: m_s=0 -> -1, m_I=0 line + detuning).")
_NO_FIT = typer.Option(False, "--no-fit", help="Skip the fit.")


def _common(config, seed, shots, fmt, output, workers, b_field=None, rabi=None, **extra: Any) -> RunConfig:
    return _config(
        config,
        seed=seed,
        shots=shots,
        format=fmt,
        output=output,
        workers=workers,
        b_field=_vector(b_field, "--b-field"),
        rabi=_maybe_quantity(rabi, "frequency", "--rabi"),
        **extra,
    )


# ---------- Commands ----------


@app.command()
def odmr(
    b_field: Optional[str] = _B_FIELD,
    orientations: str = typer.Option("aligned", "--orientations", help="aligned | bulk4 | powder"),
    samples: int = typer.Option(10_000, "--samples", help="Powder-average orientation samples."),
    f_from: str = typer.Option("2.80GHz", "--from", help="Start frequency."),
    f_to: str = typer.Option("2.94GHz", "--to", help="Stop frequency."),
    points: int = typer.Option(701, "--points", help="Frequency points."),
    linewidth: Optional[str] = typer.Option(None, "--linewidth", help="Lorentzian FWHM (default 1MHz)."),
    contrast: Optional[float] = typer.Option(None, "--contrast", help="Spectral weight per orientation (default 0.1)."),
    strain: Optional[str] = typer.Option(None, "--strain", help="Transverse strain E, e.g. 5MHz."),
    no_hyperfine: bool = typer.Option(False, "--no-hyperfine", help="Drop the 14N hyperfine and quadrupole terms."),
    config: Optional[str] = _CONFIG,
    seed: Optional[int] = _SEED,
    fmt: Optional[str] = _FORMAT,
    output: Optional[str] = _OUTPUT,
    schema: bool = _SCHEMA,
) -> None:
    """Static ODMR spectrum of one, four or a powder of NV orientations."""
    cfg = _common(
        config,
        seed,
        None,
        fmt,
        output,
        None,
        b_field=b_field,
        linewidth=_maybe_quantity(linewidth, "frequency", "--linewidth"),
        contrast=contrast,
        e_strain=_maybe_quantity(strain, "frequency", "--strain"),
        hyperfine=False if no_hyperfine else None,
    )
    if points < 2:
        raise typer.BadParameter("need at least 2 points", param_hint="--points")
    freqs = np.linspace(_quantity(f_from, "frequency", "--from"), _quantity(f_to, "frequency", "--to"), points)
    params = {"orientations": orientations, "points": points, "from_hz": float(freqs[0]), "to_hz": float(freqs[-1])}
    with audited("odmr", **params):
        nv = cfg.nv_parameters()
        if orientations == "aligned":
            per_orientation = [nv]
        elif orientations == "bulk4":
            per_orientation = bulk_orientations(nv)
        elif orientations == "powder":
            per_orientation = []
            params["samples"] = samples
        else:
            raise typer.BadParameter("expected aligned, bulk4 or powder", param_hint="--orientations")

        if per_orientation:
            spectrum = odmr_spectrum(per_orientation, freqs, cfg.linewidth, cfg.contrast)
            lines = [
                [
                    {"frequency_hz": t.frequency, "lower": list(t.lower), "upper": list(t.upper), "amplitude": t.amplitude}
                    for t in transitions_for(p)
                ]
                for p in per_orientation
            ]
        else:
            spectrum = powder_spectrum(nv, freqs, samples, cfg.effective_seed, cfg.linewidth, cfg.contrast)
            lines = []
        dips = count_resolved_dips(spectrum)
        frame = pd.DataFrame({"frequency": spectrum.frequencies, "signal": spectrum.values})
        _write(
            cfg,
            "odmr",
            params,
            frame,
            {"dips_hz": dips, "n_dips": len(dips), "orientations": len(per_orientation) or samples, "transitions": lines},
        )


@app.command()
def rabi(
    b_field: Optional[str] = _B_FIELD,
    frequency: Optional[str] = _FREQUENCY,
    detuning: str = typer.Option("0Hz", "--detuning", help="Offset from the resonance when --frequency is not given."),
    rabi_freq: Optional[str] = _RABI,
    t_from: str = typer.Option("0s", "--from", help="Shortest pulse."),
    t_to: str = typer.Option("1us", "--to", help="Longest pulse."),
    points: int = typer.Option(101, "--points"),
    no_fit: bool = _NO_FIT,
    config: Optional[str] = _CONFIG,
    seed: Optional[int] = _SEED,
    shots: Optional[int] = _SHOTS,
    fmt: Optional[str] = _FORMAT,
    output: Optional[str] = _OUTPUT,
    workers: Optional[int] = _WORKERS,
    schema: bool = _SCHEMA,
) -> None:
    """Rabi oscillation vs pulse length, fitted with damped_sin."""
    cfg = _common(config, seed, shots, fmt, output, workers, b_field=b_field, rabi=rabi_freq)
    with audited("rabi", points=points) as ctx:
        f = _drive_frequency(cfg, frequency, detuning)
        span = (_quantity(t_from, "time", "--from"), _quantity(t_to, "time", "--to"), points)
        frame = _sweep(cfg, rabi_protocol(span, f, rabi=cfg.effective_rabi))
        results: Dict[str, Any] = {"drive_frequency_hz": f}
        if not no_fit:
            res = _fit("damped_sin", frame["t"].to_numpy(dtype=float), _signal(frame))
            results.update(fit=res.to_dict(), rabi_frequency_hz=abs(res.as_dict()["frequency"]))
            ctx["converged"] = res.converged
        _write(cfg, "rabi", {"drive_frequency_hz": f, "range": list(span)}, frame, results)


@app.command("ramsey-time")
def ramsey_time(
    b_field: Optional[str] = _B_FIELD,
    frequency: Optional[str] = _FREQUENCY,
    detuning: str = typer.Option("3MHz", "--detuning", help="Offset from the resonance when --frequency is not given."),
    rabi_freq: Optional[str] = _RABI,
    t_from: str = typer.Option("0s", "--from", help="Shortest free evolution."),
    t_to: str = typer.Option("4us", "--to", help="Longest free evolution."),
    points: int = typer.Option(200, "--points"),
    no_fit: bool = _NO_FIT,
    config: Optional[str] = _CONFIG,
    seed: Optional[int] = _SEED,
    shots: Optional[int] = _SHOTS,
    fmt: Optional[str] = _FORMAT,
    output: Optional[str] = _OUTPUT,
    workers: Optional[int] = _WORKERS,
    schema: bool = _SCHEMA,
) -> None:
    """Ramsey fringes vs free-evolution time, fitted with ramsey_3cos (hyperfine triplet)."""
    cfg = _common(config, seed, shots, fmt, output, workers, b_field=b_field, rabi=rabi_freq)
    with audited("ramsey-time", points=points) as ctx:
        f = _drive_frequency(cfg, frequency, detuning)
        span = (_quantity(t_from, "time", "--from"), _quantity(t_to, "time", "--to"), points)
        frame = _sweep(cfg, ramsey_vs_time(span, f, rabi=cfg.effective_rabi))
        results: Dict[str, Any] = {"drive_frequency_hz": f}
        if not no_fit:
            res = _fit("ramsey_3cos", frame["tau"].to_numpy(dtype=float), _signal(frame))
            tones = sorted(abs(res.as_dict()[f"f_{k}"]) for k in (1, 2, 3))
            results.update(fit=res.to_dict(), frequencies_hz=tones, spacings_hz=list(np.diff(tones)))
            ctx["converged"] = res.converged
        _write(cfg, "ramsey-time", {"drive_frequency_hz": f, "range": list(span)}, frame, results)


@app.command("ramsey-freq")
def ramsey_freq(
    b_field: Optional[str] = _B_FIELD,
    tau: str = typer.Option("1us", "--tau", help="Free-evolution time."),
    rabi_freq: Optional[str] = _RABI,
    f_from: Optional[str] = typer.Option(None, "--from", help="Start frequency (default resonance - 5MHz)."),
    f_to: Optional[str] = typer.Option(None, "--to", help="Stop frequency (default resonance + 5MHz)."),
    points: int = typer.Option(201, "--points"),
    config: Optional[str] = _CONFIG,
    seed: Optional[int] = _SEED,
    shots: Optional[int] = _SHOTS,
    fmt: Optional[str] = _FORMAT,
    output: Optional[str] = _OUTPUT,
    workers: Optional[int] = _WORKERS,
    schema: bool = _SCHEMA,
) -> None:
    """Ramsey fringes vs drive frequency at fixed free evolution."""
    cfg = _common(config, seed, shots, fmt, output, workers, b_field=b_field, rabi=rabi_freq)
    with audited("ramsey-freq", points=points):
        wait = _quantity(tau, "time", "--tau")
        lo = _maybe_quantity(f_from, "frequency", "--from")
        hi = _maybe_quantity(f_to, "frequency", "--to")
        if lo is None or hi is None:
            center = _resonance(cfg.nv_parameters())
            lo = center - 5e6 if lo is None else lo
            hi = center + 5e6 if hi is None else hi
        span = (lo, hi, points)
        frame = _sweep(cfg, ramsey_vs_freq(span, wait, rabi=cfg.effective_rabi))
        results = {"fringe_period_hz": 1.0 / wait if wait > 0 else None}
        _write(cfg, "ramsey-freq", {"tau_s": wait, "range": list(span)}, frame, results)


@app.command()
def t1(
    t_from: str = typer.Option("0s", "--from", help="Shortest dark wait."),
    t_to: str = typer.Option("3ms", "--to", help="Longest dark wait."),
    points: int = typer.Option(30, "--points"),
    no_fit: bool = _NO_FIT,
    config: Optional[str] = _CONFIG,
    seed: Optional[int] = _SEED,
    shots: Optional[int] = _SHOTS,
    fmt: Optional[str] = _FORMAT,
    output: Optional[str] = _OUTPUT,
    workers: Optional[int] = _WORKERS,
    schema: bool = _SCHEMA,
) -> None:
    """All-optical T1: polarize, wait in the dark, read out. Fitted with exp_decay."""
    cfg = _common(config, seed, shots, fmt, output, workers)
    with audited("t1", points=points) as ctx:
        span = (_quantity(t_from, "time", "--from"), _quantity(t_to, "time", "--to"), points)
        frame = _sweep(cfg, t1_protocol(span))
        results: Dict[str, Any] = {}
        if not no_fit:
            res = _fit("exp_decay", frame["tau"].to_numpy(dtype=float), _signal(frame))
            results.update(fit=res.to_dict(), t1_s=res.as_dict()["tau"])
            ctx["converged"] = res.converged
        _write(cfg, "t1", {"range": list(span)}, frame, results)


@app.command()
def echo(
    b_field: Optional[str] = _B_FIELD,
    frequency: Optional[str] = _FREQUENCY,
    detuning: str = typer.Option("0Hz", "--detuning"),
    rabi_freq: Optional[str] = _RABI,
    t_from: str = typer.Option("0s", "--from", help="Shortest half echo time."),
    t_to: str = typer.Option("100us", "--to", help="Longest half echo time."),
    points: int = typer.Option(50, "--points"),
    no_fit: bool = _NO_FIT,
    config: Optional[str] = _CONFIG,
    seed: Optional[int] = _SEED,
    shots: Optional[int] = _SHOTS,
    fmt: Optional[str] = _FORMAT,
    output: Optional[str] = _OUTPUT,
    workers: Optional[int] = _WORKERS,
    schema: bool = _SCHEMA,
) -> None:
    """Hahn echo pi/2 - tau - pi - tau - pi/2, fitted with exp_decay (T2 = 2 x fitted tau)."""
    cfg = _common(config, seed, shots, fmt, output, workers, b_field=b_field, rabi=rabi_freq)
    with audited("echo", points=points) as ctx:
        f = _drive_frequency(cfg, frequency, detuning)
        span = (_quantity(t_from, "time", "--from"), _quantity(t_to, "time", "--to"), points)
        frame = _sweep(cfg, hahn_echo(span, f, rabi=cfg.effective_rabi))
        results: Dict[str, Any] = {"drive_frequency_hz": f}
        if not no_fit:
            res = _fit("exp_decay", frame["tau"].to_numpy(dtype=float), _signal(frame))
            results.update(fit=res.to_dict(), t2_echo_s=2.0 * res.as_dict()["tau"])
            ctx["converged"] = res.converged
        _write(cfg, "echo", {"drive_frequency_hz": f, "range": list(span)}, frame, results)


def _overrides(program: SequenceProgram, specs: List[str]) -> Dict[str, Sequence[float]]:
    out: Dict[str, Sequence[float]] = {}
    for spec in specs:
        name, sep, rng = spec.partition("=")
        name = name.strip().lstrip("$")
        if not sep or name not in program.variables():
            raise typer.BadParameter(f"{spec!r} does not name a sweep of the program", param_hint="--sweep")
        sweep = program.sweep(name)
        try:
            start, stop, points = parse_range(rng, sweep.dimension)
        except SequenceSyntaxError as e:
            raise typer.BadParameter(e.message, param_hint="--sweep") from e
        out[name] = np.linspace(start, stop, points).tolist()
    return out


@app.command()
def run(
    file: str = typer.Argument(..., help="Sequence file."),
    sweep: List[str] = typer.Option([], "--sweep", help="var=start:stop:points, replaces the file's grid."),
    fit_model: Optional[str] = typer.Option(None, "--fit", help="Fit model for the first readout vs the first sweep."),
    b_field: Optional[str] = _B_FIELD,
    rabi_freq: Optional[str] = _RABI,
    config: Optional[str] = _CONFIG,
    seed: Optional[int] = _SEED,
    shots: Optional[int] = _SHOTS,
    fmt: Optional[str] = _FORMAT,
    output: Optional[str] = _OUTPUT,
    workers: Optional[int] = _WORKERS,
    schema: bool = _SCHEMA,
) -> None:
    """Execute a sequence file over its sweep grid."""
    cfg = _common(config, seed, shots, fmt, output, workers, b_field=b_field, rabi=rabi_freq)
    try:
        program = parse_file(file)
    except OSError as e:
        raise typer.BadParameter(f"cannot read {file!r}: {e.strerror or e}", param_hint="FILE") from e
    with audited("run", file=file, sweep=list(sweep), fit=fit_model) as ctx:
        overrides = _overrides(program, list(sweep))
        first = sweep_points(program, overrides)[0]
        timeline = compile_program(program, first, CompileOptions(rabi=cfg.rabi))
        frame = _sweep(cfg, program, overrides)
        results: Dict[str, Any] = {"timeline_total_duration_s": timeline.total_duration, "points": len(frame)}
        if fit_model:
            names = program.variables()
            if not names:
                raise typer.BadParameter("the program has no sweep to fit against", param_hint="--fit")
            res = _fit(fit_model, frame[names[0]].to_numpy(dtype=float), _signal(frame))
            results["fit"] = res.to_dict()
            if res.model == "ramsey_3cos":
                results["frequencies_hz"] = sorted(abs(res.as_dict()[f"f_{k}"]) for k in (1, 2, 3))
            ctx["converged"] = res.converged
        _write(cfg, "run", {"file": file, "sweep": list(sweep), "fit": fit_model}, frame, results)


@app.command()
def sgi(
    atoms: float = typer.Option(1e7, "--atoms", help="Carbon atoms in the nanodiamond."),
    gradient: float = typer.Option(1e5, "--gradient", help="Gradient magnitude in T/m."),
    duration: str = typer.Option("40us", "--duration", help="Total interferometer time."),
    arms: str = typer.Option("0,1", "--arms", help="m_s of the two arms."),
    segments: Optional[str] = typer.Option(
        None, "--segments", help="Explicit profile 'duration:gradient,...' (SI) instead of the symmetric one."
    ),
    samples: int = typer.Option(201, "--samples", help="Trajectory samples."),
    t2: Optional[str] = typer.Option(None, "--t2", help="Spin coherence time for the contrast estimate."),
    config: Optional[str] = _CONFIG,
    fmt: Optional[str] = _FORMAT,
    output: Optional[str] = _OUTPUT,
    schema: bool = _SCHEMA,
) -> None:
    """Stern-Gerlach interferometer trajectories of a levitated nanodiamond."""
    cfg = _common(config, None, None, fmt, output, None)
    try:
        pair = tuple(int(a) for a in arms.split(","))
    except ValueError as e:
        raise typer.BadParameter(f"expected two integers, got {arms!r}", param_hint="--arms") from e
    if len(pair) != 2:
        raise typer.BadParameter(f"expected two integers, got {arms!r}", param_hint="--arms")
    total = _quantity(duration, "time", "--duration")
    coherence = _maybe_quantity(t2, "time", "--t2")
    params = {"atoms": atoms, "gradient_t_per_m": gradient, "duration_s": total, "arms": list(pair), "t2_s": coherence}
    with audited("sgi", **params):
        nd = nd_from_atoms(int(round(atoms)))
        if segments:
            try:
                pairs = [tuple(float(v) for v in s.split(":")) for s in segments.split(",")]
            except ValueError as e:
                raise typer.BadParameter(f"malformed segments {segments!r}", param_hint="--segments") from e
            profile = make_profile(pairs)  # type: ignore[arg-type]
        else:
            profile = symmetric_profile(gradient, total)
        result = simulate_interferometer(nd, profile, pair, samples, coherence)  # type: ignore[arg-type]
        frame = pd.DataFrame({"t": result.times, "z_a": result.z[0], "z_b": result.z[1], "v_a": result.v[0], "v_b": result.v[1]})
        summary = {k: v for k, v in result.to_dict().items() if k != "samples"}
        _write(cfg, "sgi", params, frame, {"nd": nd.summary(), **summary})


@app.command()
def resonator(
    frequency: str = typer.Option("2.87GHz", "--frequency", help="Design resonance."),
    inductance: float = typer.Option(1e-9, "--inductance", help="Loop inductance in henry."),
    bandwidth: str = typer.Option("270MHz", "--bandwidth", help="3 dB bandwidth."),
    power: float = typer.Option(1.0, "--power", help="Drive power in watt."),
    radius: float = typer.Option(0.5e-3, "--radius", help="Loop radius in m (ignored with --geometry)."),
    loop_segments: int = typer.Option(10_000, "--loop-segments", help="Polyline segments of the loop."),
    geometry: Optional[str] = typer.Option(None, "--geometry", help="JSON geometry: loop, split_ring or polyline."),
    extent: Optional[float] = typer.Option(None, "--extent", help="Half width of the square grid in m (default 0.5 r)."),
    grid_points: int = typer.Option(21, "--grid-points", help="Grid points per side."),
    height: float = typer.Option(0.0, "--height", help="Grid plane z in m."),
    z_load: float = typer.Option(650.0, "--z-load", help="Loop impedance to match, ohm."),
    balun_ratio: float = typer.Option(2.0, "--balun-ratio"),
    config: Optional[str] = _CONFIG,
    fmt: Optional[str] = _FORMAT,
    output: Optional[str] = _OUTPUT,
    workers: Optional[int] = _WORKERS,
    schema: bool = _SCHEMA,
) -> None:
    """Loop-gap resonator: RLC values for f0 and bandwidth, feed match and a Biot-Savart field map."""
    cfg = _common(config, None, None, fmt, output, workers)
    f0 = _quantity(frequency, "frequency", "--frequency")
    bw = _quantity(bandwidth, "frequency", "--bandwidth")
    params = {"f0_hz": f0, "inductance_h": inductance, "bandwidth_hz": bw, "power_w": power, "geometry": geometry}
    with audited("resonator", **params):
        c = capacitance_for_frequency(f0, inductance)
        design = make_design(
            inductance=inductance,
            capacitance=c,
            series_resistance=series_resistance_for_bandwidth(inductance, c, bw),
            drive_power=power,
        )
        qf = bandwidth_and_q(design)
        current = loop_current(design)
        try:
            conductor = load_geometry(geometry) if geometry else circular_loop(radius, n_segments=loop_segments)
        except OSError as e:
            raise typer.BadParameter(f"cannot read {geometry!r}: {e.strerror or e}", param_hint="--geometry") from e
        half = extent if extent is not None else 0.5 * radius
        axis = np.linspace(-half, half, grid_points)
        pts, shape = grid(axis, axis, (height,))
        fmap = loop_field_map(conductor, current, pts, shape=shape, workers=cfg.workers)
        metrics = field_metrics(fmap, None, design)
        network = feed_network(50.0, balun_ratio, z_load)
        match = {**network.summary(), "reflection_at_f0": abs(reflection_coefficient(network, f0, f0))}
        results = {
            **qf.to_dict(),
            "capacitance_f": c,
            "series_resistance_ohm": design.series_resistance,
            "loop_current_a": current,
            "match": match,
            "metrics": metrics.to_dict(),
        }
        _write(cfg, "resonator", params, fmap.to_frame(), results)


@app.command()
def fit(
    model: str = typer.Argument(..., help="lorentzian_multi(n) | ramsey_3cos | exp_decay | damped_sin"),
    datafile: str = typer.Argument(..., help="Two-column table (x, y), CSV or whitespace separated."),
    weighting: Optional[str] = typer.Option(None, "--weighting", help="none | poisson"),
    config: Optional[str] = _CONFIG,
    fmt: Optional[str] = _FORMAT,
    output: Optional[str] = _OUTPUT,
    schema: bool = _SCHEMA,
) -> None:
    """Levenberg-Marquardt fit of a data file."""
    cfg = _common(config, None, None, fmt, output, None)
    if weighting not in (None, "none", "poisson"):
        raise typer.BadParameter("expected none or poisson", param_hint="--weighting")
    with audited("fit", model=model, datafile=datafile, weighting=weighting) as ctx:
        fit_model = get_model(model)
        x, y = load_fit_data(datafile, fit_model.n_params)
        res = fit_auto(fit_model, x, y, None if weighting == "none" else weighting)
        ctx["converged"] = res.converged
        frame = pd.DataFrame({"x": x, "y": y, "model": fit_model(x, res.parameters)})
        _write(cfg, "fit", {"model": model, "datafile": datafile, "weighting": weighting}, frame, res.to_dict())


# ---------- Entry point ----------


def main(argv: Optional[List[str]] = None) -> int:
    """Exit codes: 0 ok, 1 usage error, 2 physics / validation error."""
    args = sys.argv[1:] if argv is None else list(argv)
    try:
        rv = app(args=args, prog_name="nvsim", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return 1
    except click.exceptions.Abort:
        return 1
    except ConfigError as e:
        typer.echo(f"error[cli]: {e}", err=True)
        return 1
    except NVSimError as e:
        typer.echo(e.qualified(), err=True)
        return 2
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    raise SystemExit(main())
