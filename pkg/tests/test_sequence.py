import pathlib

import numpy as np
import pandas as pd
import pytest

from nvsim.analysis import damped_sin, exp_decay, fft_tones, fit_auto, ramsey_3cos
from nvsim.dsl import parse, parse_file
from nvsim.dynamics import OpticalRates, RelaxationParams, SpinState
from nvsim.errors import SequenceCompileError, TimelineError
from nvsim.hamiltonian import TETRAHEDRAL_AXES, NVParameters, transitions_for
from nvsim.sequence import (
    CompileOptions,
    Event,
    Timeline,
    compile_program,
    cw_odmr,
    execute,
    hahn_echo,
    pulsed_odmr,
    rabi,
    ramsey_vs_freq,
    ramsey_vs_time,
    run_sweep,
    sweep_points,
    t1,
)

SEQUENCES = pathlib.Path(__file__).resolve().parents[1] / "sequences"
AXIS = np.asarray(TETRAHEDRAL_AXES[0])
BRIGHT = OpticalRates(collection_efficiency=1.0)


def aligned(b, hyperfine=True):
    p = NVParameters(b_field=tuple(b * AXIS))
    return p if hyperfine else p.without_hyperfine()


def resonance(p, mi=0):
    return transitions_for(p).find((0, mi), (-1, mi)).frequency


def same_timeline(a, b):
    assert a.total_ns == b.total_ns
    assert len(a.events) == len(b.events)
    for x, y in zip(a.events, b.events):
        assert (x.start_ns, x.end_ns, x.channel, x.role, x.echo) == (y.start_ns, y.end_ns, y.channel, y.role, y.echo)
        if x.frequency is None:
            assert y.frequency is None
        else:
            assert x.frequency == pytest.approx(y.frequency, rel=1e-12)
            assert x.rabi == pytest.approx(y.rabi, rel=1e-12)


# ---------- compile ----------


def test_pulses_are_laid_out_back_to_back():
    program = parse("laser 3us\nwait 1us\nmw pi/2 @ 2.87GHz\nmw pi @ 2.87GHz\nreadout 300ns\n")
    tl = compile_program(program, options=CompileOptions(rabi=25e6))
    spans = [(e.channel, e.start_ns, e.end_ns) for e in tl.events]
    assert spans == [
        ("laser", 0, 3000),
        ("wait", 3000, 4000),
        ("mw", 4000, 4010),  # 1/(4 * 25 MHz)
        ("mw", 4010, 4030),  # 1/(2 * 25 MHz)
        ("readout", 4030, 4330),
    ]
    assert tl.total_ns == 4330
    assert tl.total_duration == pytest.approx(4.33e-6)
    assert [e.role for e in tl.events if e.channel == "mw"] == ["pi/2", "pi"]


def test_amplitude_in_dbm_scales_rabi():
    program = parse("mw 100ns @ 2.87GHz amp 24dBm\n")
    (ev,) = compile_program(program).events
    assert ev.rabi == pytest.approx(5e6 * 10 ** (-6 / 20))


def test_durations_snap_to_the_nanosecond_grid():
    program = parse("wait 1.2ns\nlaser 2.7ns\n")
    tl = compile_program(program)
    assert [(e.start_ns, e.end_ns) for e in tl.events] == [(0, 1), (1, 4)]


def test_repeat_expands_contiguously():
    program = parse("laser 1us\nrepeat 3 { mw 100ns @ 2.87GHz; wait 200ns }\nreadout 300ns\n")
    tl = compile_program(program)
    mw = [e.start_ns for e in tl.events if e.channel == "mw"]
    assert mw == [1000, 1300, 1600]
    assert tl.total_ns == 1000 + 3 * 300 + 300


def test_sweep_assignment_and_missing_variables():
    program = parse("sweep tau 0us:2us:3\nlaser 1us\nwait $tau\nreadout 300ns\n")
    assert sweep_points(program) == [{"tau": 0.0}, {"tau": 1e-6}, {"tau": 2e-6}]
    tl = compile_program(program, {"tau": 1e-6})
    assert tl.events[1].duration == pytest.approx(1e-6)
    with pytest.raises(SequenceCompileError):
        compile_program(program)


def test_duration_guards():
    with pytest.raises(SequenceCompileError):
        compile_program(parse("wait 2s\n"))
    with pytest.raises(SequenceCompileError):
        compile_program(parse("repeat 1000 { wait 2ms }\n"))
    with pytest.raises(SequenceCompileError):
        compile_program(parse("wait 2ms\n"), options=CompileOptions(max_duration=1e-3))


def test_compile_options_reject_bad_rabi():
    with pytest.raises(ValueError):
        CompileOptions(rabi=0.0)


# ---------- timeline ----------


def test_timeline_json_round_trip():
    tl = compile_program(hahn_echo((0.0, 10e-6, 3), 2.87e9), {"tau": 5e-6})
    again = Timeline.from_json(tl.to_json())
    assert again == tl
    assert '"schema_version": 1' in tl.to_json()


def test_timeline_rejects_overlaps_and_bad_json():
    with pytest.raises(TimelineError):
        Timeline((Event(0, 10, "mw", 2.87e9, 1e6), Event(5, 15, "mw", 2.87e9, 1e6)), 20)
    with pytest.raises(TimelineError):
        Timeline((Event(0, 30, "laser"),), 20)
    with pytest.raises(TimelineError):
        Timeline.from_json("{not json")
    with pytest.raises(TimelineError):
        Timeline.from_json('{"events": []}')


# ---------- protocol files ----------


GENERATED = {
    "cw_odmr": lambda: cw_odmr((2.85e9, 2.89e9, 81)),
    "pulsed_odmr": lambda: pulsed_odmr((2.85e9, 2.89e9, 81)),
    "rabi": lambda: rabi((0.0, 1e-6, 101), 2.87e9),
    "ramsey": lambda: ramsey_vs_time((0.0, 4e-6, 200), 2.5927e9),
    "ramsey_freq": lambda: ramsey_vs_freq((2.86e9, 2.88e9, 201), 1e-6),
    "t1": lambda: t1((0.0, 3e-3, 30)),
    "hahn_echo": lambda: hahn_echo((0.0, 100e-6, 50), 2.87e9),
}


@pytest.mark.parametrize("name", sorted(GENERATED))
def test_sequence_files_match_generators(name):
    from_file = parse_file(str(SEQUENCES / f"{name}.seq"))
    generated = GENERATED[name]()
    file_points = sweep_points(from_file)
    gen_points = sweep_points(generated)
    assert len(file_points) == len(gen_points)
    options = CompileOptions(rabi=10e6)
    for i in (0, len(file_points) // 2, len(file_points) - 1):
        (var,) = file_points[i]
        assert file_points[i][var] == pytest.approx(gen_points[i][var], rel=1e-12, abs=1e-15)
        same_timeline(
            compile_program(from_file, file_points[i], options),
            compile_program(generated, gen_points[i], options),
        )


def test_generators_reject_empty_ranges():
    with pytest.raises(SequenceCompileError):
        rabi((0.0, 0.0, 10), 2.87e9)
    with pytest.raises(SequenceCompileError):
        t1((0.0, 1e-3))


# ---------- execute ----------


def test_execute_returns_one_trace_per_readout():
    p = aligned(0.03, hyperfine=False)
    program = parse(f"laser 3us\nreadout 300ns\nwait 1us\nmw pi @ {resonance(p)!r}Hz\nreadout 300ns\n")
    result = execute(compile_program(program), SpinState.thermal(), p, RelaxationParams(optical=BRIGHT))
    assert len(result.traces) == 2
    assert result.windows[0] == pytest.approx((3e-6, 3.3e-6))
    assert result.traces[0].times[0] >= 3e-6 - 1e-12
    # after the pi pulse the spin sits mostly in m_s = -1 and reads out darker
    bright = result.traces[0].values.mean()
    dark = result.traces[1].values.mean()
    assert dark < bright


def test_randomized_timelines_keep_state_valid(check_valid):
    rng = np.random.default_rng(99)
    p = aligned(5e-3)
    relax = RelaxationParams()
    f0 = resonance(p)
    for _ in range(1000):
        lines = []
        for _ in range(rng.integers(1, 6)):
            kind = rng.integers(3)
            if kind == 0:
                lines.append(f"laser {int(rng.integers(10, 1000))}ns")
            elif kind == 1:
                lines.append(f"wait {int(rng.integers(0, 5000))}ns")
            else:
                df = float(rng.uniform(-5e6, 5e6))
                lines.append(f"mw {int(rng.integers(0, 300))}ns @ {f0 + df!r}Hz phase {float(rng.uniform(0, 1))!r}")
        tl = compile_program(parse("\n".join(lines) + "\n"))
        final = execute(tl, SpinState.thermal(), p, relax).final
        check_valid(final.rho)
        assert abs(final.occupations.sum() - 1.0) < 1e-9


def test_ramsey_fringes_vs_frequency_repeat_every_inverse_delay():
    p = aligned(0.03, hyperfine=False)
    f0 = resonance(p)
    tau = 2e-6
    program = ramsey_vs_freq((f0 - 5e6, f0 + 5e6, 201), tau, rabi=20e6)
    frame = run_sweep(program, p, RelaxationParams(t2_star=50e-6, optical=BRIGHT))
    ((delay, _, _),) = fft_tones(frame["f"].to_numpy(), frame["mean_counts"].to_numpy(), 1)
    assert 1.0 / delay == pytest.approx(1.0 / tau, rel=0.02)


# ---------- sweeps ----------


def test_run_sweep_is_seeded_and_independent_of_workers():
    p = aligned(0.03, hyperfine=False)
    program = rabi((0.0, 200e-9, 5), resonance(p), rabi=5e6)
    relax = RelaxationParams(optical=BRIGHT)
    one = run_sweep(program, p, relax, shots=200, seed=42)
    again = run_sweep(program, p, relax, shots=200, seed=42)
    two = run_sweep(program, p, relax, shots=200, seed=42, workers=2)
    pd.testing.assert_frame_equal(one, again)
    pd.testing.assert_frame_equal(one, two)
    assert list(one.columns) == ["t", "mean_counts", "sample_mean"]
    other = run_sweep(program, p, relax, shots=200, seed=43)
    assert not np.array_equal(one["sample_mean"].to_numpy(), other["sample_mean"].to_numpy())


def test_run_sweep_without_shots_has_no_samples():
    program = t1((10e-6, 1e-3, 3))
    df = run_sweep(program, NVParameters(), RelaxationParams())
    assert df["sample_mean"].isna().all()
    assert df["mean_counts"].gt(0).all()


def test_rabi_frequency_is_recovered_from_noisy_counts():
    p = aligned(0.03, hyperfine=False)
    program = rabi((0.0, 1e-6, 101), resonance(p), rabi=5e6)
    df = run_sweep(program, p, RelaxationParams(optical=BRIGHT), shots=2000, seed=11)
    res = fit_auto(damped_sin(), df["t"], df["sample_mean"])
    assert res.as_dict()["frequency"] == pytest.approx(5e6, rel=0.01)


def test_t1_is_recovered_from_noisy_counts():
    program = t1((10e-6, 3e-3, 30))
    relax = RelaxationParams(t1=1e-3, optical=BRIGHT)
    df = run_sweep(program, NVParameters(), relax, shots=10_000, seed=3)
    res = fit_auto(exp_decay(), df["tau"], df["sample_mean"])
    assert res.as_dict()["tau"] == pytest.approx(1e-3, rel=0.03)


def test_hahn_echo_decays_with_t2_echo():
    p = aligned(0.03, hyperfine=False)
    program = hahn_echo((0.5e-6, 40e-6, 40), resonance(p), rabi=25e6)
    relax = RelaxationParams(t1=1.0, t2_echo=20e-6, optical=BRIGHT)
    df = run_sweep(program, p, relax)
    res = fit_auto(exp_decay(), df["tau"], df["mean_counts"])
    # total free evolution is 2 tau
    assert 2.0 * res.as_dict()["tau"] == pytest.approx(20e-6, rel=0.05)


def test_ramsey_shows_the_hyperfine_triplet():
    p = aligned(0.01)
    program = ramsey_vs_time((0.0, 4e-6, 200), resonance(p) + 3e6)
    relax = RelaxationParams(t2_star=2e-6, optical=BRIGHT)
    df = run_sweep(program, p, relax, options=CompileOptions(rabi=25e6))
    res = fit_auto(ramsey_3cos(), df["tau"], df["mean_counts"])
    freqs = [res.as_dict()[f"f_{k}"] for k in (1, 2, 3)]
    assert freqs == sorted(freqs)
    assert np.allclose(np.diff(freqs), 2.16e6, atol=0.1e6)
    assert freqs[1] == pytest.approx(3e6, abs=0.1e6)
