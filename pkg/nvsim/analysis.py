"""
Levenberg-Marquardt fitting and the spectroscopy fit models.

Parameter layouts:
  lorentzian_multi(n): [baseline, c_1, w_1, d_1, ..., c_n, w_n, d_n]
  ramsey_3cos:         [A, B, T2*, f_1, f_2, f_3, phi_1, phi_2, phi_3]
  exp_decay:           [amplitude, tau, offset]
  damped_sin:          [amplitude, frequency, phase, tau, offset]
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.signal import find_peaks, peak_widths

from nvsim.audit import get_logger, log_event
from nvsim.errors import FitError, UnderdeterminedError

logger = get_logger("analysis")

TINY = 1e-300

# ---------- Models ----------


def model_lorentzian_multi(f: np.ndarray, params: Sequence[float]) -> np.ndarray:
    """baseline - sum_i d_i (w_i/2)^2 / ((f - c_i)^2 + (w_i/2)^2)"""
    p = np.asarray(params, dtype=float)
    f = np.asarray(f, dtype=float)
    out = np.full(f.shape, p[0])
    for c, w, d in p[1:].reshape(-1, 3):
        half = 0.5 * w
        out = out - d * half**2 / ((f - c) ** 2 + half**2)
    return out


def model_ramsey_3cos(t: np.ndarray, params: Sequence[float]) -> np.ndarray:
    """A + B exp(-t/T2*) sum_k cos(2 pi f_k t + phi_k)"""
    a, b, t2, f1, f2, f3, p1, p2, p3 = np.asarray(params, dtype=float)
    t = np.asarray(t, dtype=float)
    tones = np.cos(2 * np.pi * f1 * t + p1) + np.cos(2 * np.pi * f2 * t + p2) + np.cos(2 * np.pi * f3 * t + p3)
    return a + b * np.exp(-t / t2) * tones


def model_exp_decay(t: np.ndarray, params: Sequence[float]) -> np.ndarray:
    amplitude, tau, offset = np.asarray(params, dtype=float)
    return offset + amplitude * np.exp(-np.asarray(t, dtype=float) / tau)


def model_damped_sin(t: np.ndarray, params: Sequence[float]) -> np.ndarray:
    amplitude, frequency, phase, tau, offset = np.asarray(params, dtype=float)
    t = np.asarray(t, dtype=float)
    return offset + amplitude * np.exp(-t / tau) * np.cos(2 * np.pi * frequency * t + phase)


@dataclass(frozen=True)
class FitModel:
    name: str
    param_names: Tuple[str, ...]
    func: Callable[[np.ndarray, Sequence[float]], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    n_dips: int = 0

    def __post_init__(self) -> None:
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != (len(self.param_names),) or hi.shape != lo.shape:
            raise FitError(f"bounds of model {self.name!r} do not match its {len(self.param_names)} parameters")
        if np.any(lo > hi):
            raise FitError(f"model {self.name!r} has a lower bound above its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def __call__(self, x: np.ndarray, params: Sequence[float]) -> np.ndarray:
        return self.func(x, params)

    def with_bounds(self, lower: Sequence[float], upper: Sequence[float]) -> "FitModel":
        return FitModel(self.name, self.param_names, self.func, np.asarray(lower), np.asarray(upper), self.n_dips)


def lorentzian_multi(n: int) -> FitModel:
    if n < 1:
        raise FitError(f"lorentzian_multi needs n >= 1, got {n}")
    names = ["baseline"]
    lower = [-np.inf]
    for i in range(1, n + 1):
        names += [f"center_{i}", f"width_{i}", f"depth_{i}"]
        lower += [-np.inf, TINY, -np.inf]
    return FitModel(f"lorentzian_multi({n})", tuple(names), model_lorentzian_multi, np.array(lower), np.full(len(names), np.inf), n)


def ramsey_3cos() -> FitModel:
    names = ("A", "B", "T2star", "f_1", "f_2", "f_3", "phi_1", "phi_2", "phi_3")
    lower = np.array([-np.inf, -np.inf, TINY] + [-np.inf] * 6)
    return FitModel("ramsey_3cos", names, model_ramsey_3cos, lower, np.full(9, np.inf))


def exp_decay() -> FitModel:
    return FitModel(
        "exp_decay", ("amplitude", "tau", "offset"), model_exp_decay, np.array([-np.inf, TINY, -np.inf]), np.full(3, np.inf)
    )


def damped_sin() -> FitModel:
    return FitModel(
        "damped_sin",
        ("amplitude", "frequency", "phase", "tau", "offset"),
        model_damped_sin,
        np.array([-np.inf, -np.inf, -np.inf, TINY, -np.inf]),
        np.full(5, np.inf),
    )


def get_model(spec: str) -> FitModel:
    """'lorentzian_multi(6)', 'lorentzian_multi:6', 'ramsey_3cos', 'exp_decay', 'damped_sin'."""
    s = spec.strip()
    if s.startswith("lorentzian_multi"):
        rest = s[len("lorentzian_multi") :].strip("():")
        try:
            return lorentzian_multi(int(rest) if rest else 1)
        except ValueError as e:
            raise FitError(f"bad dip count in model {spec!r}") from e
    table = {"ramsey_3cos": ramsey_3cos, "exp_decay": exp_decay, "damped_sin": damped_sin}
    if s not in table:
        raise FitError(f"unknown fit model {spec!r} (expected lorentzian_multi(n), {', '.join(table)})")
    return table[s]()


# ---------- Result ----------


@dataclass(frozen=True)
class FitResult:
    model: str
    param_names: Tuple[str, ...]
    parameters: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    converged: bool
    iterations: int
    initial_residual_norm: float = float("nan")
    n_points: int = 0

    @property
    def uncertainties(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def as_dict(self) -> Dict[str, float]:
        return dict(zip(self.param_names, (float(v) for v in self.parameters)))

    def to_dict(self) -> Dict[str, object]:
        return {
            "model": self.model,
            "parameters": self.as_dict(),
            "uncertainties": dict(zip(self.param_names, (float(v) for v in self.uncertainties))),
            "residual_norm": self.residual_norm,
            "initial_residual_norm": self.initial_residual_norm,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_points": self.n_points,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def report(self) -> str:
        width = max(len(n) for n in self.param_names)
        lines = [f"model {self.model}: converged={self.converged} iterations={self.iterations}"]
        for name, v, s in zip(self.param_names, self.parameters, self.uncertainties):
            lines.append(f"  {name:<{width}} = {v:.10g} +/- {s:.3g}")
        lines.append(f"  residual_norm = {self.residual_norm:.6g}")
        return "\n".join(lines)


# ---------- Engine ----------


def numeric_jacobian(
    func: Callable[[np.ndarray, Sequence[float]], np.ndarray],
    x: np.ndarray,
    p: np.ndarray,
    upper: Optional[np.ndarray] = None,
    f0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Forward differences with step 1e-6 relative (1e-6 absolute at zero); backward at an upper bound."""
    p = np.asarray(p, dtype=float)
    f0 = func(x, p) if f0 is None else f0
    jac = np.empty((len(f0), len(p)))
    for j in range(len(p)):
        h = 1e-6 * abs(p[j]) if p[j] != 0 else 1e-6
        if upper is not None and p[j] + h > upper[j]:
            h = -h
        q = p.copy()
        q[j] += h
        jac[:, j] = (func(x, q) - f0) / (q[j] - p[j])
    return jac


def _weights(y: np.ndarray, weighting: Union[None, str, Sequence[float]]) -> np.ndarray:
    if weighting is None or weighting == "none":
        return np.ones_like(y)
    if isinstance(weighting, str):
        if weighting != "poisson":
            raise FitError(f"unknown weighting {weighting!r} (expected 'none' or 'poisson')")
        # weight 1/max(y, 1) on squared residuals
        return 1.0 / np.sqrt(np.maximum(y, 1.0))
    w = np.asarray(weighting, dtype=float)
    if w.shape != y.shape or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise FitError("explicit weights must be finite, >= 0 and match the data length")
    return w


def _column_scale(a: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.diag(a))
    d[~(d > 0)] = 1.0
    return d


def _check_data(model: FitModel, x: np.ndarray, y: np.ndarray) -> None:
    if x.ndim != 1 or x.shape != y.shape:
        raise FitError(f"x and y must be 1-D arrays of equal length, got {x.shape} and {y.shape}")
    if len(x) < model.n_params:
        raise FitError(f"{model.name} has {model.n_params} parameters but only {len(x)} data points")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FitError("fit data contains non-finite values")


def fit(
    model: FitModel,
    x: Sequence[float],
    y: Sequence[float],
    init: Sequence[float],
    weighting: Union[None, str, Sequence[float]] = None,
    max_iterations: int = 200,
    tolerance: float = 1e-10,
) -> FitResult:
    """
    Damped Gauss-Newton (Marquardt scaling) from `init`: lambda starts at 1e-3, x10 on a
    rejected step, /10 on an accepted one. Stops when the relative decrease of the
    squared residual drops below `tolerance`, when the residual is zero, or after
    `max_iterations`. Parameters are projected onto the model bounds after every step.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_data(model, x, y)
    p = np.asarray(init, dtype=float).copy()
    if p.shape != (model.n_params,):
        raise FitError(f"{model.name} expects {model.n_params} initial values, got {p.shape[0] if p.ndim else 0}")
    if not np.all(np.isfinite(p)):
        raise FitError("initial parameters must be finite")
    p = np.clip(p, model.lower, model.upper)
    w = _weights(y, weighting)

    def residual(q: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
        fq = model(x, q)
        r = w * (y - fq)
        return fq, r, float(r @ r)

    f_p, r, cost = residual(p)
    if not np.isfinite(cost):
        raise FitError("model is not finite at the initial parameters")
    initial_cost = cost
    lam = 1e-3
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        if cost == 0.0:
            converged = True
            break
        jac = numeric_jacobian(model.func, x, p, model.upper, f_p) * w[:, None]
        a = jac.T @ jac
        g = jac.T @ r
        # Marquardt system in unit-diagonal coordinates
        d = _column_scale(a)
        a_scaled = a / np.outer(d, d)
        eye = np.eye(len(p))
        accepted = False
        while lam <= 1e20:
            step = np.linalg.lstsq(a_scaled + lam * eye, g / d, rcond=None)[0] / d
            q = np.clip(p + step, model.lower, model.upper)
            f_q, r_q, cost_q = residual(q)
            if np.isfinite(cost_q) and cost_q < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged = True
            break
        rel = (cost - cost_q) / max(cost, TINY)
        small_step = np.all(np.abs(q - p) <= 1e-15 * (np.abs(p) + 1e-300))
        p, f_p, r, cost = q, f_q, r_q, cost_q
        lam = max(lam / 10.0, 1e-12)
        if rel < tolerance or small_step:
            converged = True
            break

    jac = numeric_jacobian(model.func, x, p, model.upper, f_p) * w[:, None]
    dof = max(len(x) - model.n_params, 1)
    a = jac.T @ jac
    d = _column_scale(a)
    cov = np.linalg.pinv(a / np.outer(d, d)) / np.outer(d, d) * (cost / dof)
    cov = 0.5 * (cov + cov.T)
    result = FitResult(
        model=model.name,
        param_names=model.param_names,
        parameters=p,
        covariance=cov,
        residual_norm=math.sqrt(cost),
        converged=converged,
        iterations=iterations,
        initial_residual_norm=math.sqrt(initial_cost),
        n_points=len(x),
    )
    result = _canonical(model, result)
    log_event(
        logger,
        "fit",
        model=model.name,
        converged=result.converged,
        iterations=result.iterations,
        residual_norm=result.residual_norm,
    )
    return result


def wrap_phase(phi: np.ndarray) -> np.ndarray:
    """Map onto (-pi, pi]."""
    out = np.mod(np.asarray(phi, dtype=float) + np.pi, 2 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def _reparametrize(result: FitResult, p: np.ndarray, order: np.ndarray, signs: np.ndarray) -> FitResult:
    t = np.diag(signs)[order]
    cov = t @ result.covariance @ t.T
    return FitResult(
        result.model,
        result.param_names,
        p[order],
        cov,
        result.residual_norm,
        result.converged,
        result.iterations,
        result.initial_residual_norm,
        result.n_points,
    )


def _canonical(model: FitModel, result: FitResult) -> FitResult:
    """Remove sign, phase-wrap and permutation ambiguities of the fitted vector."""
    p = result.parameters.copy()
    n = len(p)
    signs = np.ones(n)
    order = np.arange(n)
    if model.name == "ramsey_3cos":
        for k in range(3):
            if p[3 + k] < 0:
                p[3 + k] *= -1
                p[6 + k] *= -1
                signs[[3 + k, 6 + k]] = -1
        p[6:9] = wrap_phase(p[6:9])
        tones = np.argsort(p[3:6], kind="stable")
        order = np.concatenate([[0, 1, 2], 3 + tones, 6 + tones])
    elif model.name == "damped_sin":
        if p[1] < 0:
            p[1] *= -1
            p[2] *= -1
            signs[[1, 2]] = -1
        p[2] = wrap_phase(p[2])
    elif model.n_dips > 0:
        dips = np.argsort(p[1::3], kind="stable")
        order = np.concatenate([[0]] + [[1 + 3 * d, 2 + 3 * d, 3 + 3 * d] for d in dips])
    return _reparametrize(result, p, order, signs)


def fit_multistart(
    model: FitModel,
    x: Sequence[float],
    y: Sequence[float],
    inits: Sequence[Sequence[float]],
    weighting: Union[None, str, Sequence[float]] = None,
    workers: int = 1,
) -> FitResult:
    """Fit from every start; lowest residual wins, ties go to the lowest start index."""
    if not inits:
        raise FitError("fit_multistart needs at least one start")

    def run(init: Sequence[float]) -> Optional[FitResult]:
        try:
            return fit(model, x, y, init, weighting)
        except FitError:
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, inits))
    else:
        results = [run(i) for i in inits]
    best: Optional[Tuple[int, FitResult]] = None
    for i, r in enumerate(results):
        if r is not None and (best is None or r.residual_norm < best[1].residual_norm):
            best = (i, r)
    if best is None:
        raise FitError("every start of the multistart fit failed")
    log_event(logger, "fit_multistart", starts=len(inits), best_start=best[0])
    return best[1]


# ---------- Initial guesses ----------


def smooth(y: np.ndarray, window: int = 5) -> np.ndarray:
    return pd.Series(y).rolling(window, center=True, min_periods=1).mean().to_numpy()


def noise_level(y: np.ndarray) -> float:
    """Robust sigma of the point-to-point scatter."""
    d = np.diff(np.asarray(y, dtype=float))
    if not d.size:
        return 0.0
    return float(1.4826 * np.median(np.abs(d - np.median(d))) / math.sqrt(2.0))


def find_dips(x: np.ndarray, y: np.ndarray, n: int) -> List[Tuple[float, float, float]]:
    """(center, width, depth) of the `n` most prominent dips, ordered by center."""
    s = smooth(y)
    span = float(np.max(s) - np.min(s))
    threshold = max(4.0 * noise_level(y), 1e-9 * max(span, abs(float(np.median(y))), TINY))
    idx, props = find_peaks(-s, prominence=threshold)
    if len(idx) < n:
        raise UnderdeterminedError(f"found {len(idx)} dip(s) above the noise but the model needs {n}")
    top = np.sort(idx[np.argsort(-props["prominences"], kind="stable")[:n]])
    widths, _, left, right = peak_widths(-s, top, rel_height=0.5)
    positions = np.arange(len(x), dtype=float)
    baseline = float(np.median(y))
    out = []
    for k, i in enumerate(top):
        w = float(np.interp(right[k], positions, x) - np.interp(left[k], positions, x))
        dx = float(np.min(np.abs(np.diff(x)))) if len(x) > 1 else 1.0
        out.append((float(x[i]), max(w, dx), baseline - float(y[i])))
    return out


def fft_tones(t: np.ndarray, y: np.ndarray, n: int, pad: int = 8) -> List[Tuple[float, float, float]]:
    """(frequency, amplitude, phase) of the `n` strongest spectral peaks, ordered by frequency."""
    dt = float(np.mean(np.diff(t)))
    m = len(y) * pad
    spec = np.fft.rfft(y - np.mean(y), n=m)
    freqs = np.fft.rfftfreq(m, dt)
    mag = np.abs(spec)
    idx, props = find_peaks(mag, height=1e-12 * max(float(np.max(mag)), TINY))
    idx = idx[idx > 0]
    if len(idx) < n:
        raise UnderdeterminedError(f"found {len(idx)} spectral peak(s) but the model needs {n}")
    top = np.sort(idx[np.argsort(-mag[idx], kind="stable")[:n]])
    # phase referenced to t[0] = 0
    phase = np.angle(spec[top] * np.exp(2j * np.pi * freqs[top] * t[0]))
    return [(float(freqs[k]), float(2 * mag[k] / len(y)), float(ph)) for k, ph in zip(top, phase)]


def initial_guess(model: FitModel, x: Sequence[float], y: Sequence[float]) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not len(x) or x.shape != y.shape:
        raise FitError("initial_guess needs non-empty x and y of equal length")
    span = float(x[-1] - x[0]) if len(x) > 1 else 1.0

    if model.n_dips > 0:
        dips = find_dips(x, y, model.n_dips)
        p = [float(np.median(y))]
        for c, w, d in dips:
            p += [c, w, d]
        return np.array(p)

    if model.name == "exp_decay":
        decaying = y[0] >= y[-1]
        rng = float(np.max(y) - np.min(y)) or 1.0
        offset = float(np.min(y) - 1e-3 * rng) if decaying else float(np.max(y) + 1e-3 * rng)
        r = (y - offset) if decaying else (offset - y)
        mask = r > 0
        if mask.sum() < 2:
            raise UnderdeterminedError("exp_decay needs at least two points off the baseline")
        slope, intercept = np.polyfit(x[mask], np.log(r[mask]), 1)
        tau = -1.0 / slope if slope < 0 else span
        amplitude = math.exp(intercept) * (1.0 if decaying else -1.0)
        return np.array([amplitude, tau, offset])

    if model.name == "damped_sin":
        (f, amp, ph), = fft_tones(x, y, 1)
        return np.array([0.5 * float(np.max(y) - np.min(y)), f, ph, span, float(np.mean(y))])

    if model.name == "ramsey_3cos":
        tones = fft_tones(x, y, 3)
        b = float(np.mean([a for _, a, _ in tones]))
        return np.array(
            [float(np.mean(y)), b, 0.5 * span] + [f for f, _, _ in tones] + [ph for _, _, ph in tones]
        )

    raise FitError(f"no initial-guess heuristic for model {model.name!r}")


def fit_auto(
    model: FitModel,
    x: Sequence[float],
    y: Sequence[float],
    weighting: Union[None, str, Sequence[float]] = None,
) -> FitResult:
    """initial_guess followed by fit."""
    return fit(model, x, y, initial_guess(model, x, y), weighting)
