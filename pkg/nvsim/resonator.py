"""
Microwave resonator design: lumped RLC resonance and Q, quarter-wave matching
through a balun, and Biot-Savart field maps of loop / split-ring conductors.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import constants

from nvsim.audit import get_logger, log_event
from nvsim.errors import ResonatorError

logger = get_logger("resonator")

MU_0 = constants.mu_0
GAUSS = 1e-4  # tesla
# field amplitude wanted at the NV over the ~300 MHz drive band
TARGET_FIELD_BAND = (1.0 * GAUSS, 5.0 * GAUSS)
TARGET_BANDWIDTH = 300e6

# ---------- Lumped circuit ----------


class RLCDesign(BaseModel):
    """Loop inductance with its series loss, resonated by a parallel capacitor."""

    model_config = ConfigDict(frozen=True)

    inductance: float
    capacitance: float
    series_resistance: float = 0.0
    drive_power: float = 1.0

    @field_validator("inductance", "capacitance")
    @classmethod
    def _positive(cls, v: float) -> float:
        if not np.isfinite(v) or v <= 0:
            raise ValueError(f"L and C must be finite and > 0, got {v!r}")
        return v

    @field_validator("series_resistance", "drive_power")
    @classmethod
    def _non_negative(cls, v: float) -> float:
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"R and drive power must be finite and >= 0, got {v!r}")
        return v


def make_design(**fields: Any) -> RLCDesign:
    try:
        return RLCDesign(**fields)
    except ValueError as e:
        raise ResonatorError(str(e)) from e


@dataclass(frozen=True)
class QualityFactor:
    f0: float
    q: float
    bandwidth: float
    infinite: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "f0_hz": self.f0,
            "q": None if self.infinite else self.q,
            "bandwidth_hz": self.bandwidth,
            "infinite_q": self.infinite,
        }


def resonant_frequency(design: RLCDesign) -> float:
    return 1.0 / (2.0 * math.pi * math.sqrt(design.inductance * design.capacitance))


def capacitance_for_frequency(f0: float, inductance: float) -> float:
    if not f0 > 0 or not inductance > 0:
        raise ResonatorError("need f0 > 0 and inductance > 0")
    return 1.0 / ((2.0 * math.pi * f0) ** 2 * inductance)


def bandwidth_and_q(design: RLCDesign) -> QualityFactor:
    """Q = sqrt(L/C) / R, bandwidth = f0 / Q. R = 0 is reported as an infinite-Q flag."""
    f0 = resonant_frequency(design)
    if design.series_resistance == 0:
        return QualityFactor(f0, math.inf, 0.0, infinite=True)
    q = math.sqrt(design.inductance / design.capacitance) / design.series_resistance
    return QualityFactor(f0, q, f0 / q)


def series_resistance_for_bandwidth(inductance: float, capacitance: float, bandwidth: float) -> float:
    """Inverse of bandwidth_and_q: the loss that gives the requested 3 dB bandwidth."""
    if not bandwidth > 0:
        raise ResonatorError(f"bandwidth must be > 0, got {bandwidth!r}")
    f0 = 1.0 / (2.0 * math.pi * math.sqrt(inductance * capacitance))
    return math.sqrt(inductance / capacitance) * bandwidth / f0


def loop_current(design: RLCDesign) -> float:
    """Resonant loop current Q * sqrt(P / R) for the parallel topology."""
    qf = bandwidth_and_q(design)
    if qf.infinite:
        raise ResonatorError("loop current is unbounded for a lossless (R = 0) design")
    return qf.q * math.sqrt(design.drive_power / design.series_resistance)


# ---------- Matching ----------


def quarter_wave_match(z_source: float, z_load: float) -> float:
    if not z_source > 0 or not z_load > 0:
        raise ResonatorError(f"impedances must be > 0, got {z_source!r} and {z_load!r}")
    return math.sqrt(z_source * z_load)


class LineSection(BaseModel):
    model_config = ConfigDict(frozen=True)

    z0: float
    length: float = 0.25  # wavelengths at the design frequency


class MatchNetwork(BaseModel):
    """Source -> balun (impedance ratio) -> line sections -> load."""

    model_config = ConfigDict(frozen=True)

    sections: Tuple[LineSection, ...]
    z_source: float
    z_load: float
    balun_ratio: float = 1.0

    @model_validator(mode="after")
    def _positive(self) -> "MatchNetwork":
        values = [self.z_source, self.z_load, self.balun_ratio] + [s.z0 for s in self.sections]
        if any(not v > 0 for v in values):
            raise ValueError("impedances and the balun ratio must be > 0")
        return self

    @property
    def z_balanced(self) -> float:
        return self.z_source * self.balun_ratio

    def summary(self) -> Dict[str, Any]:
        return {
            "z_source_ohm": self.z_source,
            "balun_ratio": self.balun_ratio,
            "z_balanced_ohm": self.z_balanced,
            "sections": [{"z0_ohm": s.z0, "length_wavelengths": s.length} for s in self.sections],
            "z_load_ohm": self.z_load,
        }


def feed_network(z_source: float = 50.0, balun_ratio: float = 2.0, z_load: float = 650.0) -> MatchNetwork:
    """50 ohm unbalanced -> balun -> quarter-wave section onto the loop impedance."""
    try:
        zt = quarter_wave_match(z_source * balun_ratio, z_load)
        return MatchNetwork(sections=(LineSection(z0=zt),), z_source=z_source, z_load=z_load, balun_ratio=balun_ratio)
    except ValueError as e:
        raise ResonatorError(str(e)) from e


def input_impedance(network: MatchNetwork, frequency: float, f_design: float) -> complex:
    """Impedance seen by the source, lossless line formula per section, balun as a ratio."""
    z = complex(network.z_load)
    for s in reversed(network.sections):
        t = math.tan(2.0 * math.pi * s.length * frequency / f_design)
        z = s.z0 * (z + 1j * s.z0 * t) / (s.z0 + 1j * z * t)
    return z / network.balun_ratio


def reflection_coefficient(network: MatchNetwork, frequency: float, f_design: float) -> complex:
    z = input_impedance(network, frequency, f_design)
    return (z - network.z_source) / (z + network.z_source)


# ---------- Geometry ----------


@dataclass(frozen=True)
class Conductor:
    """Polyline carrying a current along increasing vertex index."""

    name: str
    points: np.ndarray  # (M, 3)

    def __post_init__(self) -> None:
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 2 or p.shape[1] != 3 or p.shape[0] < 2:
            raise ResonatorError("conductor needs at least two 3-D vertices")
        if not np.all(np.isfinite(p)):
            raise ResonatorError("conductor vertices must be finite")
        if np.any(np.linalg.norm(np.diff(p, axis=0), axis=1) == 0):
            raise ResonatorError("conductor has a zero-length segment")
        object.__setattr__(self, "points", p)

    @property
    def n_segments(self) -> int:
        return len(self.points) - 1

    def segments(self) -> Tuple[np.ndarray, np.ndarray]:
        """(midpoints, dl) of every segment."""
        a, b = self.points[:-1], self.points[1:]
        return 0.5 * (a + b), b - a


def _plane_basis(normal: Sequence[float]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = np.asarray(normal, dtype=float)
    norm = np.linalg.norm(n)
    if norm == 0:
        raise ResonatorError("loop normal must be non-zero")
    n = n / norm
    ref = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = ref - np.dot(ref, n) * n
    u /= np.linalg.norm(u)
    return u, np.cross(n, u), n


def _arc(radius: float, center: Sequence[float], normal: Sequence[float], phi0: float, phi1: float, n: int) -> np.ndarray:
    if not radius > 0:
        raise ResonatorError(f"radius must be > 0, got {radius!r}")
    if n < 3:
        raise ResonatorError(f"need at least 3 segments, got {n!r}")
    u, v, _ = _plane_basis(normal)
    phi = np.linspace(phi0, phi1, n + 1)
    return np.asarray(center, dtype=float) + radius * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v)


def circular_loop(
    radius: float,
    center: Sequence[float] = (0.0, 0.0, 0.0),
    normal: Sequence[float] = (0.0, 0.0, 1.0),
    n_segments: int = 10_000,
) -> Conductor:
    """Closed polygon inscribed in the circle; current circulates right-handed about `normal`."""
    pts = _arc(radius, center, normal, 0.0, 2.0 * math.pi, n_segments)
    pts[-1] = pts[0]
    return Conductor(f"loop(r={radius:g})", pts)


def split_ring(
    radius: float,
    gap: float,
    center: Sequence[float] = (0.0, 0.0, 0.0),
    normal: Sequence[float] = (0.0, 0.0, 1.0),
    n_segments: int = 10_000,
) -> Conductor:
    """Ring with a gap of arc length `gap` centred on the local +u direction (feed point)."""
    half = 0.5 * gap / radius
    if not 0 < half < math.pi:
        raise ResonatorError(f"gap must lie in (0, 2*pi*radius), got {gap!r}")
    return Conductor(f"split_ring(r={radius:g},gap={gap:g})", _arc(radius, center, normal, half, 2 * math.pi - half, n_segments))


def conductor_from_spec(spec: Mapping[str, Any]) -> Conductor:
    """JSON geometry: {"type": "loop"|"split_ring"|"polyline", ...}."""
    kind = spec.get("type")
    try:
        if kind == "loop":
            return circular_loop(
                float(spec["radius"]),
                spec.get("center", (0.0, 0.0, 0.0)),
                spec.get("normal", (0.0, 0.0, 1.0)),
                int(spec.get("segments", 10_000)),
            )
        if kind == "split_ring":
            return split_ring(
                float(spec["radius"]),
                float(spec["gap"]),
                spec.get("center", (0.0, 0.0, 0.0)),
                spec.get("normal", (0.0, 0.0, 1.0)),
                int(spec.get("segments", 10_000)),
            )
        if kind == "polyline":
            return Conductor(str(spec.get("name", "polyline")), np.asarray(spec["points"], dtype=float))
    except KeyError as e:
        raise ResonatorError(f"geometry {kind!r} is missing field {e.args[0]!r}") from e
    raise ResonatorError(f"unknown geometry type {kind!r} (expected loop, split_ring or polyline)")


def load_geometry(path: str) -> Conductor:
    try:
        with open(path, "r", encoding="utf-8") as f:
            spec = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ResonatorError(f"geometry file {path} is not valid JSON: {e}") from e
    if not isinstance(spec, dict):
        raise ResonatorError(f"geometry file {path} must hold a JSON object")
    return conductor_from_spec(spec)


# ---------- Field maps ----------


@dataclass(frozen=True)
class FieldMap:
    points: np.ndarray  # (K, 3) m
    b: np.ndarray  # (K, 3) T
    singular: np.ndarray  # (K,) bool, on the wire: B reported as 0
    geometry: str
    current: float
    shape: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.points.shape != self.b.shape or self.singular.shape != (len(self.points),):
            raise ResonatorError("field map arrays disagree in shape")
        if not np.all(np.isfinite(self.b)):
            raise ResonatorError("field map contains non-finite values")

    @property
    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.b, axis=1)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "x": self.points[:, 0],
                "y": self.points[:, 1],
                "z": self.points[:, 2],
                "Bx": self.b[:, 0],
                "By": self.b[:, 1],
                "Bz": self.b[:, 2],
                "singular": self.singular.astype(int),
            }
        )

    def __add__(self, other: "FieldMap") -> "FieldMap":
        if not np.array_equal(self.points, other.points):
            raise ResonatorError("field maps on different grids cannot be superposed")
        return FieldMap(
            self.points,
            self.b + other.b,
            self.singular | other.singular,
            f"{self.geometry}+{other.geometry}",
            float("nan"),
            self.shape,
        )


def grid(xs: Sequence[float], ys: Sequence[float], zs: Sequence[float] = (0.0,)) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Lattice points (K, 3) from strictly increasing axes, x fastest."""
    axes = [np.asarray(a, dtype=float) for a in (xs, ys, zs)]
    for a in axes:
        if a.ndim != 1 or not a.size or np.any(np.diff(a) <= 0):
            raise ResonatorError("grid axes must be non-empty and strictly increasing")
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()]), tuple(len(a) for a in axes)


def _segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum distance from every point to the polyline segments a->b."""
    ab = b - a
    ap = points[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("kij,ij->ki", ap, ab) / np.einsum("ij,ij->i", ab, ab)[None, :], 0.0, 1.0)
    nearest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.min(np.linalg.norm(points[:, None, :] - nearest, axis=2), axis=1)


def _field_chunk(
    points: np.ndarray, conductor: Conductor, current: float, wire_radius: float, block: int
) -> Tuple[np.ndarray, np.ndarray]:
    mid, dl = conductor.segments()
    out = np.zeros_like(points)
    singular = np.zeros(len(points), dtype=bool)
    a, b = conductor.points[:-1], conductor.points[1:]
    for s in range(0, len(mid), block):
        r = points[:, None, :] - mid[None, s : s + block, :]
        dist = np.linalg.norm(r, axis=2)
        singular |= _segment_distance(points, a[s : s + block], b[s : s + block]) < wire_radius
        with np.errstate(divide="ignore", invalid="ignore"):
            contrib = np.cross(dl[None, s : s + block, :], r) / dist[..., None] ** 3
        out += np.nansum(np.where(np.isfinite(contrib), contrib, 0.0), axis=1)
    out *= MU_0 * current / (4.0 * math.pi)
    out[singular] = 0.0
    return out, singular


def loop_field_map(
    conductor: Conductor,
    current: float,
    points: np.ndarray,
    wire_radius: float = 1e-6,
    shape: Tuple[int, ...] = (),
    workers: int = 1,
    chunk: int = 256,
) -> FieldMap:
    """
    Biot-Savart sum over straight segments at their midpoints:
    B(r) = mu0 I / (4 pi) sum dl x (r - r_mid) / |r - r_mid|^3.
    Points closer than `wire_radius` to the wire are flagged singular and reported as 0.
    """
    if not np.isfinite(current):
        raise ResonatorError(f"current must be finite, got {current!r}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 3:
        raise ResonatorError("field points must be an (K, 3) array")
    chunks = [pts[i : i + chunk] for i in range(0, len(pts), chunk)]
    block = 2048

    def run(p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return _field_chunk(p, conductor, current, wire_radius, block)

    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    b = np.vstack([p[0] for p in parts]) if parts else np.zeros((0, 3))
    singular = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, dtype=bool)
    if singular.any():
        log_event(logger, "singular_points", geometry=conductor.name, count=int(singular.sum()))
    return FieldMap(pts, b, singular, conductor.name, float(current), shape)


# ---------- Metrics ----------


@dataclass(frozen=True)
class FieldMetrics:
    points: int
    mean_field: float  # T, at the map's current
    uniformity_percent: float  # +- %
    loop_current: Optional[float] = None
    field_at_drive: Optional[float] = None  # T
    gauss_per_sqrt_watt: Optional[float] = None
    in_target_band: Optional[bool] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "points": self.points,
            "mean_field_t": self.mean_field,
            "uniformity_percent": self.uniformity_percent,
            "loop_current_a": self.loop_current,
            "field_at_drive_t": self.field_at_drive,
            "gauss_per_sqrt_watt": self.gauss_per_sqrt_watt,
            "in_target_band": self.in_target_band,
        }


Region = Union[Tuple[float, float, float, float], Tuple[float, float, float, float, float, float]]


def region_mask(points: np.ndarray, region: Region) -> np.ndarray:
    """(xmin, xmax, ymin, ymax[, zmin, zmax]) inclusive box."""
    bounds = list(region)
    if len(bounds) == 4:
        bounds += [-np.inf, np.inf]
    if len(bounds) != 6:
        raise ResonatorError("region must be (xmin, xmax, ymin, ymax[, zmin, zmax])")
    mask = np.ones(len(points), dtype=bool)
    for axis in range(3):
        lo, hi = bounds[2 * axis], bounds[2 * axis + 1]
        mask &= (points[:, axis] >= lo) & (points[:, axis] <= hi)
    return mask


def field_metrics(fmap: FieldMap, region: Optional[Region] = None, design: Optional[RLCDesign] = None) -> FieldMetrics:
    """
    Mean |B| and +-% uniformity (max - min) / (max + min) over the region. With a design,
    the map is rescaled to the resonant loop current Q sqrt(P/R) and the drive
    efficiency is reported in G/sqrt(W).
    """
    mask = ~fmap.singular
    if region is not None:
        mask &= region_mask(fmap.points, region)
    if not mask.any():
        raise ResonatorError("field_metrics region contains no (non-singular) grid points")
    mag = fmap.magnitude[mask]
    mean = float(np.mean(mag))
    hi, lo = float(np.max(mag)), float(np.min(mag))
    uniformity = 0.0 if hi + lo == 0 else 100.0 * (hi - lo) / (hi + lo)
    if design is None:
        return FieldMetrics(int(mask.sum()), mean, uniformity)
    if not fmap.current or not np.isfinite(fmap.current):
        raise ResonatorError("field map has no reference current to rescale")
    current = loop_current(design)
    at_drive = mean * current / abs(fmap.current)
    efficiency = at_drive / GAUSS / math.sqrt(design.drive_power) if design.drive_power > 0 else None
    band = TARGET_FIELD_BAND[0] <= at_drive <= TARGET_FIELD_BAND[1]
    return FieldMetrics(int(mask.sum()), mean, uniformity, current, at_drive, efficiency, band)
