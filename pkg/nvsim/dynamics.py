"""
Spin and optical dynamics of a single NV.

- DensityMatrix: 9x9 state over |m_s, m_I> (same basis as nvsim.hamiltonian)
- microwave pulses in a multi-level rotating frame (rwa) or lab frame (full)
- phenomenological T1 / T2* / echo decoherence
- 7-level classical rate model of the laser cycle and photon-count readout
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.integrate import trapezoid

from nvsim.audit import get_logger, log_event
from nvsim.errors import ContractViolationError, CostGuardError, StabilityError, StateError
from nvsim.hamiltonian import (
    DIM,
    M_VALUES,
    NVParameters,
    SpinOperator,
    basis_labels,
    build_hamiltonian,
    eigensolve,
    spin_operators,
)
from nvsim.settings import get_settings

logger = get_logger("dynamics")

# optical level order
OPTICAL_LEVELS = ("g0", "g+1", "g-1", "e0", "e+1", "e-1", "S")
# m_s (+1, 0, -1) of the spin basis -> ground index in the optical vector
_GROUND_INDEX = {1: 1, 0: 0, -1: 2}

# ---------- Parameter records ----------


class OpticalRates(BaseModel):
    """Rates of the 7-level optical model, all in 1/s."""

    model_config = ConfigDict(frozen=True)

    pump_rate: float = 6e7
    radiative_rate: float = 1.0 / 12e-9
    isc_ms1: float = 5e7
    isc_ms0: float = 5e6
    singlet_rate: float = 1.0 / 300e-9
    singlet_branch_ms0: float = 0.5
    collection_efficiency: float = 0.1

    @field_validator("pump_rate", "radiative_rate", "isc_ms1", "isc_ms0", "singlet_rate", "collection_efficiency")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"rates must be finite and >= 0, got {v!r}")
        return v

    @field_validator("singlet_branch_ms0")
    @classmethod
    def _branch(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"singlet_branch_ms0 must lie in [0, 1], got {v!r}")
        return v

    @classmethod
    def dark(cls) -> "OpticalRates":
        return cls(pump_rate=0.0, radiative_rate=0.0, isc_ms1=0.0, isc_ms0=0.0, singlet_rate=0.0)


class RelaxationParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    t1: float = 1e-3
    t2_star: float = 2e-6
    t2_echo: float = 100e-6
    echo_exponent: float = 1.0
    optical: OpticalRates = Field(default_factory=OpticalRates)

    @field_validator("t1", "t2_star", "t2_echo", "echo_exponent")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"relaxation times must be > 0, got {v!r}")
        return v

    @model_validator(mode="after")
    def _physical(self) -> "RelaxationParams":
        if self.t2_star > 2.0 * self.t1:
            raise ValueError(f"t2_star ({self.t2_star}) must not exceed 2*t1 ({2 * self.t1})")
        return self


class DrivePulse(BaseModel):
    """Microwave pulse; `rabi` is the Rabi frequency (Hz) on a pure |0> <-> |+-1> transition."""

    model_config = ConfigDict(frozen=True)

    carrier: float
    rabi: float
    duration: float
    phase: float = 0.0
    drive_axis: Tuple[float, float, float] = (1.0, 0.0, 0.0)

    @field_validator("duration", "rabi")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"duration and rabi must be finite and >= 0, got {v!r}")
        return v

    @field_validator("drive_axis")
    @classmethod
    def _unit(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        n = float(np.linalg.norm(v))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"drive_axis must be a unit vector, |axis|={n!r}")
        return v


def dbm_to_rabi(dbm: float, reference_dbm: float = 30.0, reference_rabi: float = 5e6) -> float:
    """Rabi frequency scales with the field amplitude, i.e. the square root of MW power."""
    return reference_rabi * 10.0 ** ((dbm - reference_dbm) / 20.0)


# ---------- State containers ----------


@dataclass(frozen=True)
class DensityMatrix:
    entries: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.entries, dtype=complex)
        if m.shape != (DIM, DIM):
            raise ContractViolationError(f"density matrix must be {DIM}x{DIM}, got {m.shape}")
        tr = np.trace(m)
        if abs(tr - 1.0) > 1e-9:
            raise ContractViolationError(f"density matrix trace {tr.real:.12g} != 1")
        if np.max(np.abs(m - m.conj().T)) > 1e-10:
            raise ContractViolationError("density matrix is not Hermitian")
        if np.min(np.linalg.eigvalsh(0.5 * (m + m.conj().T))) < -1e-9:
            raise ContractViolationError("density matrix has negative eigenvalues")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @classmethod
    def from_unchecked(cls, m: np.ndarray) -> "DensityMatrix":
        """Hermitize and renormalise accumulated round-off, then validate."""
        m = 0.5 * (m + m.conj().T)
        return cls(m / np.trace(m).real)

    @classmethod
    def pure(cls, ms: int, mi: int) -> "DensityMatrix":
        k = basis_labels().index((ms, mi))
        m = np.zeros((DIM, DIM), dtype=complex)
        m[k, k] = 1.0
        return cls(m)

    @classmethod
    def electron_state(cls, ms: int) -> "DensityMatrix":
        """|m_s><m_s| with the nucleus unpolarised."""
        i = M_VALUES.index(ms)
        e = np.zeros((3, 3))
        e[i, i] = 1.0
        return cls(np.kron(e, np.eye(3) / 3.0))

    @classmethod
    def maximally_mixed(cls) -> "DensityMatrix":
        return cls(np.eye(DIM, dtype=complex) / DIM)

    @property
    def populations(self) -> np.ndarray:
        return np.diag(self.entries).real.copy()

    def electron_populations(self) -> np.ndarray:
        """Populations of m_s = (+1, 0, -1)."""
        return self.populations.reshape(3, 3).sum(axis=1)

    def population(self, ms: int) -> float:
        return float(self.electron_populations()[M_VALUES.index(ms)])

    def nuclear_state(self) -> np.ndarray:
        blocks = self.entries.reshape(3, 3, 3, 3)
        return np.einsum("aiaj->ij", blocks)

    def purity(self) -> float:
        return float(np.trace(self.entries @ self.entries).real)


@dataclass(frozen=True)
class SignalTrace:
    times: np.ndarray
    values: np.ndarray
    rng_seed: Optional[int] = None

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape:
            raise StateError("trace times and values differ in length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise StateError("trace times must be strictly increasing")
        if v.size and np.min(v) < -1e-9 * max(1.0, float(np.max(np.abs(v)))):
            raise StateError("trace values must be >= 0")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", np.clip(v, 0.0, None))

    def shifted(self, offset: float) -> "SignalTrace":
        return SignalTrace(self.times + offset, self.values, self.rng_seed)


@dataclass(frozen=True)
class ReadoutResult:
    mean_counts: float
    samples: np.ndarray
    rng_seed: Optional[Union[int, np.random.SeedSequence]] = None

    @property
    def sample_mean(self) -> float:
        return float(np.mean(self.samples)) if self.samples.size else 0.0


@dataclass(frozen=True)
class SpinState:
    """Ground-state spin density matrix plus the 7-level optical occupations."""

    rho: DensityMatrix
    occupations: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.occupations, dtype=float)
        if p.shape != (7,):
            raise StateError(f"occupations must have 7 entries, got {p.shape}")
        if abs(p.sum() - 1.0) > 1e-9 or np.min(p) < -1e-12:
            raise StateError(f"occupations must be >= 0 and sum to 1, sum={p.sum():.12g}")
        object.__setattr__(self, "occupations", np.clip(p, 0.0, None))

    @classmethod
    def thermal(cls) -> "SpinState":
        occ = np.zeros(7)
        occ[:3] = 1.0 / 3.0
        return cls(DensityMatrix.maximally_mixed(), occ)

    @property
    def ground_fraction(self) -> float:
        return float(self.occupations[:3].sum())

    def with_rho(self, rho: DensityMatrix) -> "SpinState":
        return SpinState(rho, self.occupations)


# ---------- Coherent evolution ----------


def _propagator(h: np.ndarray, dt: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(h)
    return (vecs * np.exp(-2j * np.pi * vals * dt)) @ vecs.conj().T


def evolve_unitary(rho: DensityMatrix, h: SpinOperator, dt: float) -> DensityMatrix:
    """rho -> U rho U^+, U = exp(-i 2 pi H dt) with H in Hz."""
    if dt < 0:
        raise StateError(f"dt must be >= 0, got {dt!r}")
    if dt == 0:
        return rho
    u = _propagator(np.asarray(h.entries), dt)
    return DensityMatrix.from_unchecked(u @ rho.entries @ u.conj().T)


def drive_operator(pulse: DrivePulse) -> np.ndarray:
    """
    Lab-frame drive amplitude X such that H_drive = X cos(2 pi f t + phase).
    Normalised so a pure |0> <-> |+-1> transition rotates at `pulse.rabi`.
    """
    ops = spin_operators()
    a = pulse.drive_axis
    s_dot_a = a[0] * ops.sx + a[1] * ops.sy + a[2] * ops.sz
    return np.sqrt(2.0) * pulse.rabi * s_dot_a


def _rwa(rho: DensityMatrix, pulse: DrivePulse, h0: SpinOperator, t_start: float) -> DensityMatrix:
    levels = eigensolve(h0)
    v = levels.eigenvectors
    lam = levels.eigenvalues
    # frame generator: m_s^2 of each dressed level
    q = np.array([float(ms * ms) for ms, _ in levels.labels])
    x = v.conj().T @ drive_operator(pulse) @ v
    dq = q[:, None] - q[None, :]
    x_eff = np.where(np.abs(dq) == 1.0, 0.5 * x * np.exp(-1j * pulse.phase * dq), 0.0)
    h_rot = np.diag(lam - pulse.carrier * q) + x_eff
    h_rot = 0.5 * (h_rot + h_rot.conj().T)

    t_end = t_start + pulse.duration
    frame0 = np.exp(2j * np.pi * pulse.carrier * t_start * q)
    frame1 = np.exp(2j * np.pi * pulse.carrier * t_end * q)

    r = v.conj().T @ rho.entries @ v
    r = frame0[:, None] * r * frame0.conj()[None, :]
    u = _propagator(h_rot, pulse.duration)
    r = u @ r @ u.conj().T
    r = frame1.conj()[:, None] * r * frame1[None, :]
    return DensityMatrix.from_unchecked(v @ r @ v.conj().T)


def _full(
    rho: DensityMatrix, pulse: DrivePulse, h0: SpinOperator, t_start: float, max_cycles: float
) -> DensityMatrix:
    cycles = pulse.duration * pulse.carrier
    if cycles > max_cycles:
        raise CostGuardError(
            f"full-mode pulse spans {cycles:.3g} carrier cycles (limit {max_cycles:.3g}); use rwa mode"
        )
    n = max(1, int(math.ceil(cycles * 50)))
    dt = pulse.duration / n
    h = np.asarray(h0.entries)
    x = drive_operator(pulse)
    m = rho.entries.copy()
    for k in range(n):
        tm = t_start + (k + 0.5) * dt
        u = _propagator(h + x * math.cos(2 * math.pi * pulse.carrier * tm + pulse.phase), dt)
        m = u @ m @ u.conj().T
    log_event(logger, "full_mode_pulse", steps=n, cycles=cycles)
    return DensityMatrix.from_unchecked(m)


def apply_mw_pulse(
    rho: DensityMatrix,
    pulse: DrivePulse,
    params: NVParameters,
    mode: str = "rwa",
    t_start: float = 0.0,
    max_cycles: Optional[float] = None,
) -> DensityMatrix:
    """
    Coherent evolution during a microwave pulse starting at absolute time `t_start`.

    rwa: every dressed level rotates at carrier * m_s^2; drive terms between levels whose
         m_s^2 differ by one are kept, detunings of all nine levels are retained.
    full: lab-frame H0 + X cos(2 pi f t + phase), midpoint exponential steps of at most
          1/(50 carrier).
    """
    if pulse.duration == 0:
        return rho
    h0 = build_hamiltonian(params)
    if mode == "rwa":
        return _rwa(rho, pulse, h0, t_start)
    if mode == "full":
        limit = get_settings().max_full_cycles if max_cycles is None else max_cycles
        return _full(rho, pulse, h0, t_start, limit)
    raise StateError(f"unknown drive mode {mode!r} (expected 'rwa' or 'full')")


# ---------- Decoherence ----------


_ELECTRON = np.array([ms for ms, _ in basis_labels()])
_COHERENCE_MASK = _ELECTRON[:, None] != _ELECTRON[None, :]


def coherence_factor(t: float, params: RelaxationParams, dephasing: str = "star", elapsed: float = 0.0) -> float:
    if dephasing == "star":
        return math.exp(-t / params.t2_star)
    if dephasing == "echo":
        n = params.echo_exponent
        return math.exp(-(((elapsed + t) / params.t2_echo) ** n) + (elapsed / params.t2_echo) ** n)
    raise StateError(f"unknown dephasing {dephasing!r} (expected 'star' or 'echo')")


def apply_decoherence(
    rho: DensityMatrix,
    t: float,
    params: RelaxationParams,
    dephasing: str = "star",
    elapsed: float = 0.0,
) -> DensityMatrix:
    """
    Electron coherences scale by exp(-t/T2*) (or the echo envelope increment);
    electron populations relax toward the uniform m_s mixture at rate 1/T1.
    The nuclear reduced state is untouched.
    """
    if t < 0:
        raise StateError(f"t must be >= 0, got {t!r}")
    if t == 0:
        return rho
    c = coherence_factor(t, params, dephasing, elapsed)
    p = math.exp(-t / params.t1)

    m = rho.entries.copy()
    m[_COHERENCE_MASK] *= c
    blocks = m.reshape(3, 3, 3, 3)
    nuclear = np.einsum("aiaj->ij", blocks)
    for a in range(3):
        blocks[a, :, a, :] = p * blocks[a, :, a, :] + (1.0 - p) / 3.0 * nuclear
    return DensityMatrix.from_unchecked(blocks.reshape(DIM, DIM))


# ---------- Optical cycle ----------


def rate_matrix(rates: OpticalRates, pump: float = 1.0) -> np.ndarray:
    """dp/dt = M p over (g0, g+1, g-1, e0, e+1, e-1, S); `pump` scales the laser."""
    m = np.zeros((7, 7))

    def flow(src: int, dst: int, k: float) -> None:
        m[dst, src] += k
        m[src, src] -= k

    for g, e in ((0, 3), (1, 4), (2, 5)):
        flow(g, e, rates.pump_rate * pump)
        flow(e, g, rates.radiative_rate)
    flow(3, 6, rates.isc_ms0)
    flow(4, 6, rates.isc_ms1)
    flow(5, 6, rates.isc_ms1)
    flow(6, 0, rates.singlet_rate * rates.singlet_branch_ms0)
    flow(6, 1, rates.singlet_rate * (1.0 - rates.singlet_branch_ms0) / 2.0)
    flow(6, 2, rates.singlet_rate * (1.0 - rates.singlet_branch_ms0) / 2.0)
    return m


def _rk4_matrix(m: np.ndarray, h: float) -> np.ndarray:
    hm = h * m
    hm2 = hm @ hm
    return np.eye(7) + hm + hm2 / 2.0 + hm2 @ hm / 6.0 + hm2 @ hm2 / 24.0


def _emission(rates: OpticalRates, p: np.ndarray) -> np.ndarray:
    return rates.radiative_rate * rates.collection_efficiency * p[..., 3:6].sum(axis=-1)


def optical_cycle(
    populations: Sequence[float],
    rates: OpticalRates,
    duration: float,
    dt: Optional[float] = None,
    t0: float = 0.0,
    pump_profile: Optional[Callable[[float], float]] = None,
    record: bool = True,
) -> Tuple[np.ndarray, SignalTrace]:
    """
    Fixed-step RK4 integration of the 7-level rate equations for `duration` seconds.

    `pump_profile(t)` (t relative to the window start) scales the pump rate for laser
    rise/fall ramps. Returns the final occupations and the emitted photon-rate trace
    (counts/s) sampled at every step, starting at `t0`.
    """
    p = np.asarray(populations, dtype=float).copy()
    if p.shape != (7,) or abs(p.sum() - 1.0) > 1e-9:
        raise StateError("optical occupations must have 7 entries summing to 1")
    dt = get_settings().optical_dt if dt is None else dt
    if duration < 0 or dt <= 0:
        raise StateError(f"need duration >= 0 and dt > 0, got duration={duration!r} dt={dt!r}")
    if duration == 0:
        trace = SignalTrace(np.array([t0]), _emission(rates, p)[None]) if record else SignalTrace(np.array([]), np.array([]))
        return p, trace
    if dt > duration * (1 + 1e-12):
        raise StateError(f"dt ({dt!r}) must not exceed the duration ({duration!r})")

    m_full = rate_matrix(rates, 1.0)
    max_rate = float(np.max(-np.diag(m_full)))
    if dt * max_rate > 0.1:
        raise StabilityError(f"optical step too large: dt*max_rate = {dt * max_rate:.3g} > 0.1")

    n = int(math.ceil(duration / dt - 1e-9))
    h = duration / n
    times = t0 + h * np.arange(n + 1)

    if pump_profile is None:
        step = _rk4_matrix(m_full, h)
        if not record:
            p = np.linalg.matrix_power(step, n) @ p
            return p / p.sum(), SignalTrace(np.array([]), np.array([]))
        history = np.empty((n + 1, 7))
        history[0] = p
        for k in range(n):
            p = step @ p
            history[k + 1] = p
    else:
        history = np.empty((n + 1, 7))
        history[0] = p
        for k in range(n):
            t = k * h
            m0 = rate_matrix(rates, pump_profile(t))
            mh = rate_matrix(rates, pump_profile(t + h / 2))
            m1 = rate_matrix(rates, pump_profile(t + h))
            k1 = m0 @ p
            k2 = mh @ (p + h / 2 * k1)
            k3 = mh @ (p + h / 2 * k2)
            k4 = m1 @ (p + h * k3)
            p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            history[k + 1] = p

    p = np.clip(p, 0.0, None)
    p = p / p.sum()
    if not record:
        return p, SignalTrace(np.array([]), np.array([]))
    return p, SignalTrace(times, _emission(rates, history))


def laser_ramp(duration: float, rise: float) -> Callable[[float], float]:
    """Linear rise and fall of `rise` seconds at both ends of a `duration` window."""

    def profile(t: float) -> float:
        if rise <= 0:
            return 1.0
        return float(np.clip(min(t, duration - t) / rise, 0.0, 1.0))

    return profile


def readout_counts(
    trace: SignalTrace,
    window: Tuple[float, float],
    shots: int,
    rng_seed: Optional[Union[int, np.random.SeedSequence]] = None,
) -> ReadoutResult:
    """Expected counts = integral of the trace over `window`; `shots` Poisson samples of it."""
    a, b = float(window[0]), float(window[1])
    if not b > a:
        raise StateError(f"empty readout window [{a!r}, {b!r}]")
    if trace.times.size < 2:
        raise StateError("readout trace has fewer than two samples")
    tol = 1e-12 + 1e-9 * (b - a)
    if a < trace.times[0] - tol or b > trace.times[-1] + tol:
        raise StateError(
            f"readout window [{a:.6g}, {b:.6g}] outside trace support "
            f"[{trace.times[0]:.6g}, {trace.times[-1]:.6g}]"
        )
    inner = trace.times[(trace.times > a) & (trace.times < b)]
    grid = np.concatenate([[a], inner, [b]])
    mean = float(trapezoid(np.interp(grid, trace.times, trace.values), grid))
    if shots < 0:
        raise StateError(f"shots must be >= 0, got {shots!r}")
    rng = np.random.default_rng(rng_seed)
    samples = rng.poisson(mean, size=shots) if shots else np.zeros(0, dtype=np.int64)
    return ReadoutResult(mean_counts=mean, samples=samples, rng_seed=rng_seed)


# ---------- Spin <-> optical bookkeeping ----------


def _with_electron_populations(rho: DensityMatrix, pops_by_ms: np.ndarray) -> DensityMatrix:
    """Diagonal electron state (coherences quenched) times the current nuclear state."""
    total = pops_by_ms.sum()
    if total <= 0:
        pops_by_ms = np.full(3, 1.0 / 3.0)
    else:
        pops_by_ms = pops_by_ms / total
    return DensityMatrix.from_unchecked(np.kron(np.diag(pops_by_ms), rho.nuclear_state()))


def ground_occupations(state: SpinState) -> np.ndarray:
    """Optical vector whose ground part follows the spin state's m_s populations."""
    occ = state.occupations.copy()
    pops = state.rho.electron_populations()
    g = occ[:3].sum()
    for i, ms in enumerate(M_VALUES):
        occ[_GROUND_INDEX[ms]] = g * pops[i]
    return occ


def apply_laser(
    state: SpinState,
    rates: OpticalRates,
    duration: float,
    dt: Optional[float] = None,
    t0: float = 0.0,
    pump_profile: Optional[Callable[[float], float]] = None,
    record: bool = False,
) -> Tuple[SpinState, SignalTrace]:
    """Optical pumping window; the laser destroys electron coherence."""
    occ, trace = optical_cycle(ground_occupations(state), rates, duration, dt, t0, pump_profile, record)
    pops = np.array([occ[_GROUND_INDEX[ms]] for ms in M_VALUES])
    return SpinState(_with_electron_populations(state.rho, pops), occ), trace


def relax_dark(state: SpinState, rates: OpticalRates, duration: float, dt: Optional[float] = None) -> SpinState:
    """
    Laser-off decay of excited and singlet population back to the ground manifold.
    Returning population is mixed incoherently into the spin state.
    """
    if duration <= 0 or state.ground_fraction >= 1.0 - 1e-15:
        return state
    dark = rates.model_copy(update={"pump_rate": 0.0})
    g_old = ground_occupations(state)
    dt = get_settings().optical_dt if dt is None else dt
    occ, _ = optical_cycle(g_old, dark, duration, min(dt, duration), record=False)
    gained = np.clip(occ[:3] - g_old[:3], 0.0, None)
    g_new = occ[:3].sum()
    if g_new <= 0:
        return SpinState(state.rho, occ)
    incoming = np.zeros((3, 3))
    for i, ms in enumerate(M_VALUES):
        incoming[i, i] = gained[_GROUND_INDEX[ms]]
    m = g_old[:3].sum() * state.rho.entries + np.kron(incoming, state.rho.nuclear_state())
    return SpinState(DensityMatrix.from_unchecked(m / g_new), occ)
