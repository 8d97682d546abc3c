import json
import math

import numpy as np
import pytest

from pchazard.io import DataFileError, read_data, write_data, write_json, write_table
from pchazard.simulation import ScenarioSpec, gen_scenario


@pytest.mark.parametrize("scenario", ["S1", "S2", "S3"])
def test_round_trip_is_exact(tmp_path, scenario):
    data = gen_scenario(ScenarioSpec("M1", scenario, 300, 7))
    path = tmp_path / "d.csv"
    write_data(data, path)
    back = read_data(path)
    assert np.array_equal(back.left, data.left)
    assert np.array_equal(back.right, data.right)
    assert np.array_equal(back.z, data.z)
    if data.x is None:
        assert back.x is None
    else:
        assert np.array_equal(back.x, data.x)
    assert back.z_names == ["z_1", "z_2"]


@pytest.mark.parametrize("token", ["inf", "Inf", "", "INF", "infinity"])
def test_right_censoring_tokens(tmp_path, token):
    path = tmp_path / "d.csv"
    path.write_text(f"left,right,z_1\n2.5,{token},1\n1,1,0\n")
    d = read_data(path)
    assert math.isinf(d.right[0])
    assert d.class_counts() == {"left": 0, "interval": 0, "right": 1, "exact": 1}


@pytest.mark.parametrize(
    "body,line",
    [
        ("left,right\n1,2\n3,abc\n", 3),
        ("left,right\n1,2\n2,1\n", 3),
        ("left,right\n-1,2\n", 2),
        ("left,right,z_1\n1,2\n", 2),
        ("left,right\n1,2\n\n4,nan\n", 4),
        ("left,rite\n1,2\n", 1),
        ("left,right,age\n1,2,3\n", 1),
        ("", 1),
    ],
)
def test_malformed_rows_report_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DataFileError, match=f"line {line}"):
        read_data(path)


def test_no_rows(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("left,right\n")
    with pytest.raises(DataFileError):
        read_data(path)


def test_json_is_deterministic_and_strict(tmp_path):
    doc = {"b": np.array([1.0, np.inf]), "a": float("nan"), "c": np.int64(3), "d": np.bool_(True)}
    p1, p2 = tmp_path / "1.json", tmp_path / "2.json"
    write_json(doc, p1)
    write_json(dict(reversed(list(doc.items()))), p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = json.loads(p1.read_text())
    assert back == {"a": "nan", "b": [1.0, "inf"], "c": 3, "d": True}


def test_table_writer(tmp_path):
    p = tmp_path / "t.tsv"
    write_table([{"pen": 0.1, "cuts": [10.0, 20.0], "m": 3}], p)
    assert p.read_text().splitlines() == ["pen\tcuts\tm", "0.1\t10.0;20.0\t3"]
