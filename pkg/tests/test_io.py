import json

import numpy as np
import pytest

from hiwa.datagen import GenSpec, generate
from hiwa.diagnostics import MetricReport
from hiwa.exceptions import InputError
from hiwa.io import (
    dataset_to_csv,
    dump_json,
    load_result_schema,
    read_dataset,
    result_to_dict,
    validate_result,
    write_dataset,
)
from hiwa.solver import SolverConfig, solve


def _write(tmp_path, text):
    path = tmp_path / "data.csv"
    path.write_text(text, encoding="utf-8")
    return path


def test_round_trip_is_bit_exact(tmp_path):
    X, _, _ = generate(GenSpec(3, 2, 4, 7, seed=9))
    path = tmp_path / "x.csv"
    write_dataset(path, X)
    back = read_dataset(path)
    assert len(back) == 3
    for a, b in zip(X, back):
        assert np.array_equal(a, b)


def test_csv_layout():
    text = dataset_to_csv([np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[0.5], [0.25]])])
    assert text.splitlines() == ["cluster,dim_0,dim_1", "0,1,3", "0,2,4", "1,0.5,0.25"]


def test_rows_may_be_unordered(tmp_path):
    path = _write(tmp_path, "cluster,dim_0\n1,2.0\n0,1.0\n1,3.0\n")
    X = read_dataset(path)
    np.testing.assert_array_equal(X[0], [[1.0]])
    np.testing.assert_array_equal(X[1], [[2.0, 3.0]])


@pytest.mark.parametrize("text", [
    "",
    "label,dim_0\n0,1\n",
    "cluster,dim_1\n0,1\n",
    "cluster\n0\n",
    "cluster,dim_0\n",
    "cluster,dim_0\n0,1,2\n",
    "cluster,dim_0\n0,abc\n",
    "cluster,dim_0\nx,1\n",
    "cluster,dim_0\n0,nan\n",
    "cluster,dim_0\n0,inf\n",
    "cluster,dim_0\n-1,1\n",
    "cluster,dim_0\n0,1\n2,1\n",
])
def test_malformed_files(tmp_path, text):
    with pytest.raises(InputError):
        read_dataset(_write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(InputError):
        read_dataset(tmp_path / "absent.csv")


def test_dump_json_rejects_non_finite():
    with pytest.raises(ValueError):
        dump_json({"x": float("nan")})


def test_dump_json_round_trips_floats():
    values = [0.1, 1 / 3, 2.0 ** -1074, 1e308]
    assert json.loads(dump_json({"v": values}))["v"] == values


def test_result_validates_against_schema():
    X, Y, truth = generate(GenSpec(2, 2, 3, 8, seed=1))
    config = SolverConfig(outer_max_iters=5, threads=1)
    result = solve(X, Y, config)
    payload = result_to_dict(result, config, MetricReport(0.1, 0.2), {"note": {}})
    validate_result(json.loads(dump_json(payload)))
    assert payload["config"] == config.to_dict()
    assert payload["seed"] == config.seed
    assert SolverConfig(**payload["config"]) == config


def test_schema_rejects_missing_field():
    import jsonschema

    schema = load_result_schema()
    assert "R" in schema["required"]
    with pytest.raises(jsonschema.ValidationError):
        validate_result({"R": [[1.0]]})
