"""
Stern-Gerlach interferometer estimates for a nanodiamond hosting a single NV.

Each arm carries a spin projection m_s; a magnetic gradient dB/dz exerts
a = m_s g_s mu_B dB/dz / m. Gradients are piecewise constant, so trajectories
are integrated exactly segment by segment (gravity and diamagnetism omitted:
they are common to both arms).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import constants

from nvsim.audit import get_logger, log_event
from nvsim.errors import SGIError

logger = get_logger("sgi")

ATOMIC_MASS = constants.physical_constants["atomic mass constant"][0]
MU_B = constants.physical_constants["Bohr magneton"][0]
CARBON_MASS = 12.0 * ATOMIC_MASS
DIAMOND_DENSITY = 3510.0  # kg/m^3
G_S = 2.0028
# NVs closer than this to the surface lose coherence
SHALLOW_DEPTH = 20e-9
MAX_GRADIENT = 1e6  # T/m


class NDSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_atoms: int

    @field_validator("n_atoms")
    @classmethod
    def _at_least_one(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"n_atoms must be >= 1, got {v!r}")
        return v

    @property
    def mass(self) -> float:
        return self.n_atoms * CARBON_MASS

    @property
    def volume(self) -> float:
        return self.mass / DIAMOND_DENSITY

    @property
    def cube_edge(self) -> float:
        return self.volume ** (1.0 / 3.0)

    @property
    def sphere_diameter(self) -> float:
        return (6.0 * self.volume / math.pi) ** (1.0 / 3.0)

    @property
    def nv_depth(self) -> float:
        """Depth below the surface of a centred NV (half the cube edge)."""
        return 0.5 * self.cube_edge

    @property
    def shallow(self) -> bool:
        return self.nv_depth < SHALLOW_DEPTH

    def summary(self) -> Dict[str, object]:
        return {
            "n_atoms": self.n_atoms,
            "mass_kg": self.mass,
            "cube_edge_m": self.cube_edge,
            "sphere_diameter_m": self.sphere_diameter,
            "nv_depth_m": self.nv_depth,
            "shallow_nv": self.shallow,
        }


def nd_from_atoms(n_atoms: int) -> NDSpec:
    try:
        return NDSpec(n_atoms=n_atoms)
    except ValueError as e:
        raise SGIError(str(e)) from e


class Segment(BaseModel):
    model_config = ConfigDict(frozen=True)

    duration: float
    gradient: float


class GradientProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    segments: Tuple[Segment, ...]
    max_gradient: float = MAX_GRADIENT

    @model_validator(mode="after")
    def _valid(self) -> "GradientProfile":
        if not self.segments:
            raise ValueError("gradient profile needs at least one segment")
        for i, s in enumerate(self.segments):
            if not s.duration > 0:
                raise ValueError(f"segment {i}: duration must be > 0, got {s.duration!r}")
            if not abs(s.gradient) <= self.max_gradient:
                raise ValueError(f"segment {i}: |gradient| {abs(s.gradient):.3g} T/m exceeds {self.max_gradient:.3g} T/m")
        return self

    @property
    def total_duration(self) -> float:
        return float(sum(s.duration for s in self.segments))


def make_profile(segments: Sequence[Tuple[float, float]], max_gradient: float = MAX_GRADIENT) -> GradientProfile:
    """Profile from (duration, gradient) pairs."""
    try:
        return GradientProfile(
            segments=tuple(Segment(duration=d, gradient=g) for d, g in segments), max_gradient=max_gradient
        )
    except ValueError as e:
        raise SGIError(str(e)) from e


def symmetric_profile(gradient: float, total_duration: float, max_gradient: float = MAX_GRADIENT) -> GradientProfile:
    """+G for T/4, -G for T/2, +G for T/4: both arms return to rest at the same point."""
    quarter = total_duration / 4.0
    return make_profile([(quarter, gradient), (2.0 * quarter, -gradient), (quarter, gradient)], max_gradient)


def spin_acceleration(nd: NDSpec, gradient: float, m_s: int) -> float:
    if m_s not in (-1, 0, 1):
        raise SGIError(f"m_s must be -1, 0 or +1, got {m_s!r}")
    return m_s * G_S * MU_B * gradient / nd.mass


def contrast_estimate(total_duration: float, t2: float, exponent: float = 1.0) -> float:
    """Spin-coherence-limited interferometer contrast exp(-(T/T2)^n)."""
    if not t2 > 0:
        raise SGIError(f"t2 must be > 0, got {t2!r}")
    if total_duration < 0:
        raise SGIError(f"total duration must be >= 0, got {total_duration!r}")
    return math.exp(-((total_duration / t2) ** exponent))


@dataclass(frozen=True)
class ArmSegment:
    """z(t) = z0 + (t - t0) (v0 + a (t - t0) / 2) for t0 <= t <= t0 + duration."""

    t0: float
    duration: float
    z0: float
    v0: float
    a: float

    def at(self, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        tau = np.asarray(t) - self.t0
        return self.z0 + tau * (self.v0 + 0.5 * self.a * tau), self.v0 + self.a * tau


@dataclass(frozen=True)
class SGIResult:
    arms: Tuple[int, int]
    trajectories: Tuple[Tuple[ArmSegment, ...], Tuple[ArmSegment, ...]]
    times: np.ndarray
    z: np.ndarray  # shape (2, samples)
    v: np.ndarray
    max_splitting: float
    max_splitting_time: float
    dz_final: float
    dv_final: float
    contrast: float

    def __post_init__(self) -> None:
        if self.max_splitting < 0 or not 0.0 <= self.contrast <= 1.0:
            raise SGIError("SGI result out of range (negative splitting or contrast outside [0, 1])")

    def to_dict(self) -> Dict[str, object]:
        return {
            "arms": list(self.arms),
            "max_splitting_m": self.max_splitting,
            "max_splitting_time_s": self.max_splitting_time,
            "closure": {"dz_final_m": self.dz_final, "dv_final_m_per_s": self.dv_final},
            "contrast": self.contrast,
            "segments": [
                [{"t0": s.t0, "duration": s.duration, "z0": s.z0, "v0": s.v0, "a": s.a} for s in arm]
                for arm in self.trajectories
            ],
            "samples": {
                "t": self.times.tolist(),
                "z_a": self.z[0].tolist(),
                "z_b": self.z[1].tolist(),
                "v_a": self.v[0].tolist(),
                "v_b": self.v[1].tolist(),
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _integrate(nd: NDSpec, profile: GradientProfile, m_s: int) -> Tuple[ArmSegment, ...]:
    out: List[ArmSegment] = []
    t = z = v = 0.0
    for seg in profile.segments:
        a = spin_acceleration(nd, seg.gradient, m_s)
        out.append(ArmSegment(t, seg.duration, z, v, a))
        z = z + seg.duration * (v + 0.5 * a * seg.duration)
        v = v + a * seg.duration
        t = t + seg.duration
    return tuple(out)


def _end(seg: ArmSegment) -> Tuple[float, float]:
    return seg.z0 + seg.duration * (seg.v0 + 0.5 * seg.a * seg.duration), seg.v0 + seg.a * seg.duration


def simulate_interferometer(
    nd: NDSpec,
    profile: GradientProfile,
    arms: Tuple[int, int] = (0, 1),
    samples: int = 201,
    t2: Optional[float] = None,
    exponent: float = 1.0,
) -> SGIResult:
    """
    Exact piecewise-quadratic trajectories of both arms. The maximum splitting is found
    analytically: per segment the arm separation is quadratic, so its extremum is at an
    endpoint or where the relative velocity vanishes.
    """
    if samples < 2:
        raise SGIError(f"samples must be >= 2, got {samples!r}")
    arm_a = _integrate(nd, profile, arms[0])
    arm_b = _integrate(nd, profile, arms[1])

    best, best_t = 0.0, 0.0
    for sa, sb in zip(arm_a, arm_b):
        dz0, dv0, da = sa.z0 - sb.z0, sa.v0 - sb.v0, sa.a - sb.a
        candidates = [0.0, sa.duration]
        if da != 0.0:
            tau = -dv0 / da
            if 0.0 < tau < sa.duration:
                candidates.append(tau)
        for tau in candidates:
            gap = abs(dz0 + tau * (dv0 + 0.5 * da * tau))
            if gap > best:
                best, best_t = gap, sa.t0 + tau

    za, va = _end(arm_a[-1])
    zb, vb = _end(arm_b[-1])

    total = profile.total_duration
    times = np.linspace(0.0, total, samples)
    z = np.zeros((2, samples))
    v = np.zeros((2, samples))
    for row, arm in enumerate((arm_a, arm_b)):
        starts = np.array([s.t0 for s in arm])
        which = np.clip(np.searchsorted(starts, times, side="right") - 1, 0, len(arm) - 1)
        for k, seg in enumerate(arm):
            mask = which == k
            z[row, mask], v[row, mask] = seg.at(times[mask])

    contrast = contrast_estimate(total, t2, exponent) if t2 is not None else 1.0
    log_event(
        logger, "sgi", n_atoms=nd.n_atoms, arms=list(arms), total_duration=total, max_splitting=best, contrast=contrast
    )
    return SGIResult(arms, (arm_a, arm_b), times, z, v, best, best_t, za - zb, va - vb, contrast)


def required_gradient(
    nd: NDSpec, target_splitting: float, total_duration: float, arms: Tuple[int, int] = (0, 1)
) -> float:
    """Gradient for which the symmetric profile reaches `target_splitting`: d = |dm| g mu_B G (T/4)^2 / m."""
    dm = abs(arms[0] - arms[1])
    if dm == 0:
        raise SGIError("arms with equal m_s never split")
    if not total_duration > 0 or not target_splitting >= 0:
        raise SGIError("need total_duration > 0 and target_splitting >= 0")
    return target_splitting * nd.mass / (dm * G_S * MU_B * (total_duration / 4.0) ** 2)
