from __future__ import annotations

import json
import os
import sys
import tempfile
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.16e"  # 17 significant digits, lossless round trip

# ---------- Utils ----------


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def atomic_write(path: str, text: str) -> str:
    """Write via a temp file in the target directory, then rename over `path`."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".nvsim-", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def frame_to_csv(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def summary_to_json(command: str, params: Dict[str, Any], results: Dict[str, Any]) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "parameters": params, "results": results}
    return json.dumps(_plain(doc), indent=2, sort_keys=False) + "\n"


def emit(text: str, path: Optional[str]) -> None:
    """To `path` atomically, or stdout when no path (or '-') is given."""
    if not path or path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    atomic_write(path, text)


def summary_path(output: Optional[str]) -> Optional[str]:
    """Companion JSON summary next to a CSV output: data.csv -> data.summary.json."""
    if not output or output == "-":
        return None
    root, _ = os.path.splitext(output)
    return root + ".summary.json"


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


# ---------- Output schemas (--schema) ----------


def _col(name: str, unit: str, doc: str) -> Dict[str, str]:
    return {"name": name, "unit": unit, "description": doc}


_SWEEP_COLUMNS: List[Dict[str, str]] = [
    _col("<sweep variable>", "s | Hz | dBm | rad", "swept value (one column per sweep variable)"),
    _col("mean_counts", "counts", "noiseless expected photon counts in the first readout window"),
    _col("sample_mean", "counts", "mean of the Poisson shot samples (NaN when shots = 0)"),
    _col("mean_counts_<k>, sample_mean_<k>", "counts", "same for readout window k >= 1"),
]

SCHEMAS: Dict[str, Dict[str, Any]] = {
    "odmr": {
        "csv": [_col("frequency", "Hz", "microwave frequency"), _col("signal", "1", "normalized fluorescence")],
        "summary": ["dips_hz", "n_dips", "orientations", "transitions"],
    },
    "rabi": {"csv": _SWEEP_COLUMNS, "summary": ["fit (damped_sin)", "rabi_frequency_hz"]},
    "ramsey-time": {"csv": _SWEEP_COLUMNS, "summary": ["fit (ramsey_3cos)", "frequencies_hz", "spacings_hz"]},
    "ramsey-freq": {"csv": _SWEEP_COLUMNS, "summary": ["fringe_period_hz"]},
    "t1": {"csv": _SWEEP_COLUMNS, "summary": ["fit (exp_decay)", "t1_s"]},
    "echo": {"csv": _SWEEP_COLUMNS, "summary": ["fit (exp_decay)", "t2_echo_s"]},
    "run": {"csv": _SWEEP_COLUMNS, "summary": ["timeline_total_duration_s", "fit (optional)"]},
    "sgi": {
        "csv": [
            _col("t", "s", "time"),
            _col("z_a", "m", "arm a position"),
            _col("z_b", "m", "arm b position"),
            _col("v_a", "m/s", "arm a velocity"),
            _col("v_b", "m/s", "arm b velocity"),
        ],
        "summary": ["nd", "max_splitting_m", "closure", "contrast", "segments"],
    },
    "resonator": {
        "csv": [
            _col("x", "m", "grid x"),
            _col("y", "m", "grid y"),
            _col("z", "m", "grid z"),
            _col("Bx", "T", "field x"),
            _col("By", "T", "field y"),
            _col("Bz", "T", "field z"),
            _col("singular", "0/1", "point on the wire, field not evaluated"),
        ],
        "summary": ["f0_hz", "q", "bandwidth_hz", "match", "metrics"],
    },
    "fit": {
        "csv": [_col("x", "input", "abscissa"), _col("y", "input", "data"), _col("model", "input", "fitted model")],
        "summary": ["parameters", "uncertainties", "residual_norm", "converged", "iterations"],
    },
}


def schema_json(command: str) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, "command": command, **SCHEMAS[command]}, indent=2) + "\n"
