"""
NV ground-state spin Hamiltonian (electron S=1 with a 14N nucleus I=1).

All energies are stored in Hz (E/h). The 9-dim product basis is ordered
|m_s, m_I> with m_s, m_I running over (+1, 0, -1); index = 3*i_s + i_I.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import constants
from scipy.signal import find_peaks

from nvsim.audit import get_logger, log_event
from nvsim.errors import ContractViolationError, InvalidParameterError

logger = get_logger("hamiltonian")

MU_B = constants.physical_constants["Bohr magneton"][0]
MU_N = constants.physical_constants["nuclear magneton"][0]
PLANCK = constants.h

M_VALUES = (1, 0, -1)
DIM = 9

# ---------- Spin-1 algebra ----------

_SZ = np.diag([1.0, 0.0, -1.0]).astype(complex)
_SP = np.sqrt(2.0) * np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=complex)
_SM = _SP.conj().T
_SX = 0.5 * (_SP + _SM)
_SY = -0.5j * (_SP - _SM)
_I3 = np.eye(3, dtype=complex)


@dataclass(frozen=True)
class SpinOperators:
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    ix: np.ndarray
    iy: np.ndarray
    iz: np.ndarray

    @property
    def s(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.sx, self.sy, self.sz

    @property
    def i(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.ix, self.iy, self.iz


def _build_operators() -> SpinOperators:
    ops = [np.kron(m, _I3) for m in (_SX, _SY, _SZ)] + [np.kron(_I3, m) for m in (_SX, _SY, _SZ)]
    for op in ops:
        op.setflags(write=False)
    return SpinOperators(*ops)


_OPS = _build_operators()


def spin_operators() -> SpinOperators:
    """Electron (S) and nuclear (I) spin-1 operators on the 9-dim product space."""
    return _OPS


def basis_labels() -> List[Tuple[int, int]]:
    return [(ms, mi) for ms in M_VALUES for mi in M_VALUES]


# ---------- Parameters ----------

TETRAHEDRAL_AXES = np.array(
    [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]
) / np.sqrt(3.0)


def nv_axes_bulk() -> List[np.ndarray]:
    """The four NV symmetry axes of a bulk crystal, in the crystal frame."""
    return [a.copy() for a in TETRAHEDRAL_AXES]


class NVParameters(BaseModel):
    """Every constant of the ground-state Hamiltonian plus field and NV orientation."""

    model_config = ConfigDict(frozen=True)

    d_gs: float = 2.870e9
    e_strain: float = 0.0
    p_quad: float = -4.95e6
    a_par: float = 2.16e6
    a_perp: float = -2.7e6
    g_s: float = 2.0028
    g_i: float = 0.403761
    b_field: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    nv_axis: Tuple[float, float, float] = tuple(TETRAHEDRAL_AXES[0])

    @field_validator("d_gs")
    @classmethod
    def _positive_zfs(cls, v: float) -> float:
        if not np.isfinite(v) or v <= 0:
            raise ValueError(f"d_gs must be finite and > 0, got {v!r}")
        return v

    @field_validator("e_strain", "p_quad", "a_par", "a_perp", "g_s", "g_i")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not np.isfinite(v):
            raise ValueError(f"parameter must be finite, got {v!r}")
        return v

    @field_validator("b_field")
    @classmethod
    def _finite_field(cls, v: Tuple[float, float, float]) -> Tuple[float, float, float]:
        if not np.all(np.isfinite(v)):
            raise ValueError(f"b_field must be finite, got {v!r}")
        return v

    @model_validator(mode="after")
    def _unit_axis(self) -> "NVParameters":
        norm = float(np.linalg.norm(self.nv_axis))
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-12:
            raise ValueError(f"nv_axis must have unit norm within 1e-12, |axis|={norm!r}")
        return self

    def with_axis(self, axis: Sequence[float]) -> "NVParameters":
        a = np.asarray(axis, dtype=float)
        a = a / np.linalg.norm(a)
        return self.model_copy(update={"nv_axis": tuple(float(x) for x in a)})

    def without_hyperfine(self) -> "NVParameters":
        return self.model_copy(update={"a_par": 0.0, "a_perp": 0.0, "p_quad": 0.0})


def make_parameters(**fields) -> NVParameters:
    """NVParameters(**fields) with pydantic errors mapped onto InvalidParameterError."""
    try:
        return NVParameters(**fields)
    except ValueError as e:
        raise InvalidParameterError(str(e)) from e


def gyromagnetic_ratios(params: NVParameters) -> Tuple[float, float]:
    """(gamma_e, gamma_n) in Hz/T."""
    return params.g_s * MU_B / PLANCK, params.g_i * MU_N / PLANCK


def body_frame(axis: Sequence[float]) -> np.ndarray:
    """
    Rotation matrix whose rows are the NV body axes (x', y', z') expressed in the lab frame,
    z' along `axis`. x' is the lab x direction (or lab y when the axis is close to x)
    with its axial component removed.
    """
    z = np.asarray(axis, dtype=float)
    if abs(np.linalg.norm(z) - 1.0) > 1e-12:
        raise InvalidParameterError(f"nv_axis must be a unit vector, |axis|={np.linalg.norm(z)!r}")
    ref = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = ref - np.dot(ref, z) * z
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


# ---------- Value types ----------


def _hermiticity_error(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


@dataclass(frozen=True)
class SpinOperator:
    """9x9 Hermitian matrix over the |m_s, m_I> product basis, in Hz."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.entries, dtype=complex)
        if m.shape != (DIM, DIM):
            raise ContractViolationError(f"SpinOperator must be {DIM}x{DIM}, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ContractViolationError("SpinOperator has non-finite entries")
        err = _hermiticity_error(m)
        if err > 1e-12 * max(1.0, float(np.max(np.abs(m)))):
            raise ContractViolationError(f"SpinOperator is not Hermitian (max |H-H^+| = {err:.3e})")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real)


@dataclass(frozen=True)
class EnergyLevels:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns
    labels: Tuple[Tuple[int, int], ...]

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return v @ np.diag(self.eigenvalues) @ v.conj().T


@dataclass(frozen=True)
class Transition:
    frequency: float
    lower: Tuple[int, int]
    upper: Tuple[int, int]
    amplitude: float


@dataclass(frozen=True)
class TransitionTable:
    transitions: Tuple[Transition, ...]

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self):
        return iter(self.transitions)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([t.frequency for t in self.transitions])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([t.amplitude for t in self.transitions])

    def find(self, lower: Tuple[int, int], upper: Tuple[int, int]) -> Transition:
        for t in self.transitions:
            if t.lower == lower and t.upper == upper:
                return t
        raise KeyError(f"no transition {lower} -> {upper}")


@dataclass(frozen=True)
class Spectrum:
    frequencies: np.ndarray
    values: np.ndarray
    linewidth: float
    centers: Tuple[float, ...] = ()
    depths: Tuple[float, ...] = ()

    def __post_init__(self) -> None:
        f = np.asarray(self.frequencies, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if f.shape != v.shape:
            raise InvalidParameterError("Spectrum frequencies and values differ in length")
        if v.size and (np.min(v) <= 0.0 or np.max(v) > 1.05):
            raise InvalidParameterError("Spectrum values must lie in (0, 1.05]")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "values", v)


# ---------- Operations ----------


def build_hamiltonian(params: NVParameters) -> SpinOperator:
    """
    H = H_S + H_I + H_SI in Hz with B rotated into the NV body frame:
      H_S  = D S_z^2 + gamma_e (B.S) + E (S_y^2 - S_x^2)
      H_I  = P I_z^2 - gamma_n (B.I)
      H_SI = A_par S_z I_z + A_perp (S_x I_x + S_y I_y)
    """
    rot = body_frame(params.nv_axis)
    b = rot @ np.asarray(params.b_field, dtype=float)
    gamma_e, gamma_n = gyromagnetic_ratios(params)
    o = _OPS

    h = params.d_gs * (o.sz @ o.sz)
    h = h + gamma_e * (b[0] * o.sx + b[1] * o.sy + b[2] * o.sz)
    h = h + params.e_strain * (o.sy @ o.sy - o.sx @ o.sx)
    h = h + params.p_quad * (o.iz @ o.iz)
    h = h - gamma_n * (b[0] * o.ix + b[1] * o.iy + b[2] * o.iz)
    h = h + params.a_par * (o.sz @ o.iz)
    h = h + params.a_perp * (o.sx @ o.ix + o.sy @ o.iy)
    return SpinOperator(0.5 * (h + h.conj().T))


# label operator used to fix the basis inside exactly degenerate eigenspaces
_LABEL_OP = np.diag([10.0 * ms + mi for ms, mi in basis_labels()]).astype(complex)


def _canonicalize_degenerate(vals: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    scale = max(1.0, float(np.max(np.abs(vals))) if vals.size else 1.0)
    tol = 1e-10 * scale
    out = vecs.copy()
    start = 0
    while start < len(vals):
        stop = start + 1
        while stop < len(vals) and vals[stop] - vals[stop - 1] <= tol:
            stop += 1
        if stop - start > 1:
            block = vecs[:, start:stop]
            sub = block.conj().T @ _LABEL_OP @ block
            _, w = np.linalg.eigh(0.5 * (sub + sub.conj().T))
            out[:, start:stop] = block @ w[:, ::-1]
        start = stop
    return out


def eigensolve(h: SpinOperator) -> EnergyLevels:
    """Sorted eigenvalues, orthonormal eigenvectors (columns), dominant |m_s, m_I> labels."""
    m = np.asarray(h.entries if isinstance(h, SpinOperator) else h, dtype=complex)
    err = _hermiticity_error(m)
    if err > 1e-12 * max(1.0, float(np.max(np.abs(m))) if m.size else 1.0):
        raise ContractViolationError(f"eigensolve needs a Hermitian matrix (max |H-H^+| = {err:.3e})")
    vals, vecs = np.linalg.eigh(m)
    vecs = _canonicalize_degenerate(vals, vecs)
    names = basis_labels()
    # np.argmax returns the lowest index on ties
    labels = tuple(names[int(np.argmax(np.abs(vecs[:, k]) ** 2))] for k in range(vecs.shape[1]))
    return EnergyLevels(eigenvalues=vals, eigenvectors=vecs, labels=labels)


def transition_frequencies(levels: EnergyLevels) -> TransitionTable:
    """
    Electron-spin transitions (dominant dm_s = +-1, dm_I = 0). The amplitude is the
    in-plane polarisation average (|<u|S_x|l>|^2 + |<u|S_y|l>|^2)/2, which is 1/2 for a
    pure |0> -> |+-1> transition.
    """
    v = levels.eigenvectors
    sx = v.conj().T @ _OPS.sx @ v
    sy = v.conj().T @ _OPS.sy @ v
    strength = 0.5 * (np.abs(sx) ** 2 + np.abs(sy) ** 2)
    out: List[Transition] = []
    n = len(levels.eigenvalues)
    for lo in range(n):
        for up in range(lo + 1, n):
            (ms_l, mi_l), (ms_u, mi_u) = levels.labels[lo], levels.labels[up]
            if abs(ms_u - ms_l) != 1 or mi_u != mi_l:
                continue
            amp = float(np.clip(strength[up, lo], 0.0, 1.0))
            if amp < 1e-9:
                continue
            freq = float(levels.eigenvalues[up] - levels.eigenvalues[lo])
            out.append(Transition(frequency=freq, lower=levels.labels[lo], upper=levels.labels[up], amplitude=amp))
    out.sort(key=lambda t: t.frequency)
    return TransitionTable(tuple(out))


def transitions_for(params: NVParameters) -> TransitionTable:
    return transition_frequencies(eigensolve(build_hamiltonian(params)))


def lorentzian(f: np.ndarray, center: float, width: float) -> np.ndarray:
    half = 0.5 * width
    return half**2 / ((f - center) ** 2 + half**2)


def _dip_sum(frequencies: np.ndarray, centers: np.ndarray, depths: np.ndarray, linewidth: float) -> np.ndarray:
    total = np.zeros_like(frequencies, dtype=float)
    # chunked over lines to bound memory on large powder averages
    for i in range(0, len(centers), 2048):
        c = centers[i : i + 2048, None]
        d = depths[i : i + 2048, None]
        total += np.sum(d * lorentzian(frequencies[None, :], c, linewidth), axis=0)
    return total


def _check_spectrum_inputs(linewidth: float, contrast: float) -> None:
    if not linewidth > 0:
        raise InvalidParameterError(f"linewidth must be > 0, got {linewidth!r}")
    if not 0.0 < contrast < 1.0:
        raise InvalidParameterError(f"contrast must lie in (0, 1), got {contrast!r}")


# each orientation spreads its spectral weight over three unpolarised nuclear sub-levels;
# a pure |0> -> |+-1> transition has amplitude 1/2, so the two lines of one m_I sum to one
_NUCLEAR_WEIGHT = 1.0 / 3.0


def odmr_spectrum(
    params_per_orientation: Sequence[NVParameters],
    frequencies: Sequence[float],
    linewidth: float,
    contrast: float,
) -> Spectrum:
    """1 - sum of amplitude-weighted Lorentzian dips over every orientation's transitions."""
    if not params_per_orientation:
        raise InvalidParameterError("odmr_spectrum needs at least one orientation")
    _check_spectrum_inputs(linewidth, contrast)
    f = np.asarray(frequencies, dtype=float)
    weight = contrast * _NUCLEAR_WEIGHT / len(params_per_orientation)
    centers: List[float] = []
    depths: List[float] = []
    for p in params_per_orientation:
        for t in transitions_for(p):
            centers.append(t.frequency)
            depths.append(weight * t.amplitude)
    values = 1.0 - _dip_sum(f, np.array(centers), np.array(depths), linewidth)
    return Spectrum(f, values, linewidth, tuple(centers), tuple(depths))


def bulk_orientations(params: NVParameters) -> List[NVParameters]:
    return [params.with_axis(a) for a in TETRAHEDRAL_AXES]


def random_axes(n_samples: int, rng_seed: int) -> np.ndarray:
    rng = np.random.default_rng(rng_seed)
    v = rng.normal(size=(n_samples, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def powder_spectrum(
    params: NVParameters,
    frequencies: Sequence[float],
    n_samples: int,
    rng_seed: int,
    linewidth: float = 1e6,
    contrast: float = 0.1,
) -> Spectrum:
    """Orientation average of odmr_spectrum over axes drawn uniformly on the sphere."""
    if n_samples < 1:
        raise InvalidParameterError(f"n_samples must be >= 1, got {n_samples!r}")
    axes = random_axes(n_samples, rng_seed)
    samples = [params.with_axis(a) for a in axes]
    spec = odmr_spectrum(samples, frequencies, linewidth, contrast)
    log_event(logger, "powder_spectrum", n_samples=n_samples, seed=rng_seed, lines=len(spec.centers))
    return spec


def count_resolved_dips(spectrum: Spectrum, min_separation: Optional[float] = None, prominence: float = 1e-4) -> List[float]:
    """
    Frequencies of the resolvable dips: local minima with at least `prominence`,
    merged into one cluster when closer than `min_separation` (default two linewidths).
    """
    sep = 2.0 * spectrum.linewidth if min_separation is None else min_separation
    idx, props = find_peaks(-spectrum.values, prominence=prominence)
    if not len(idx):
        return []
    freqs = spectrum.frequencies[idx]
    clusters: List[List[int]] = [[0]]
    for k in range(1, len(idx)):
        if freqs[k] - freqs[clusters[-1][-1]] > sep:
            clusters.append([k])
        else:
            clusters[-1].append(k)
    out = []
    for c in clusters:
        deepest = min(c, key=lambda k: spectrum.values[idx[k]])
        out.append(float(freqs[deepest]))
    return out
