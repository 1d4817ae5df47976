import numpy as np
import pandas as pd
import pytest

from nvsim.errors import DataValidationError
from nvsim.validation import load_fit_data, read_table, validate_frame


def _write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_header_csv_loads(tmp_path):
    path = _write(tmp_path, "x,y\n0.0,1.0\n1.0,0.5\n2.0,0.25\n3.0,0.125\n")
    x, y = load_fit_data(path, 3)
    assert x.tolist() == [0.0, 1.0, 2.0, 3.0]
    assert y.dtype == np.float64 and y[-1] == 0.125


def test_headerless_table_with_comments(tmp_path):
    path = _write(tmp_path, "0.0\t10\n# tau counts\n1e-6\t8\n2e-6\t7\n", name="data.tsv")
    x, y = load_fit_data(path, 3)
    assert x.tolist() == [0.0, 1e-6, 2e-6]
    assert y.tolist() == [10.0, 8.0, 7.0]


def test_named_columns_win_over_position(tmp_path):
    path = _write(tmp_path, "label,y,x\na,1.0,0.0\nb,2.0,1.0\nc,3.0,2.0\n")
    x, y = load_fit_data(path, 3)
    assert x.tolist() == [0.0, 1.0, 2.0]
    assert y.tolist() == [1.0, 2.0, 3.0]


def test_non_numeric_value_is_reported(tmp_path):
    path = _write(tmp_path, "x,y\n0.0,1.0\nabc,0.5\n2.0,0.25\n")
    with pytest.raises(DataValidationError) as exc:
        load_fit_data(path, 3)
    assert str(exc.value).startswith(path)
    assert "x" in str(exc.value)


def test_non_finite_and_unsorted_rows_fail():
    raw = pd.DataFrame({"x": [0.0, 2.0, 1.0], "y": [1.0, np.inf, 0.5]})
    ok, errors, _ = validate_frame(raw, 3)
    assert not ok
    assert any(e.startswith("y:") for e in errors)
    assert len(errors) >= 2


def test_too_few_rows_and_columns():
    ok, errors, _ = validate_frame(pd.DataFrame({"x": [0.0, 1.0], "y": [1.0, 2.0]}), 5)
    assert not ok and errors
    ok, errors, _ = validate_frame(pd.DataFrame({"only": [0.0, 1.0]}), 1)
    assert not ok
    assert "two columns" in errors[0]


def test_valid_frame_is_normalised():
    raw = pd.DataFrame({"X": ["0", "1", "2"], "Y": ["3.5", "4", "5"]})
    ok, errors, df = validate_frame(raw, 3)
    assert ok and errors == []
    assert list(df.columns) == ["x", "y"]
    assert df["y"].tolist() == [3.5, 4.0, 5.0]


def test_unreadable_files_raise(tmp_path):
    with pytest.raises(DataValidationError):
        read_table(str(tmp_path / "missing.csv"))
    with pytest.raises(DataValidationError):
        read_table(_write(tmp_path, ""))
