import json

import numpy as np
import pytest

from analytics.errors import DomainError, ParseError, ValidationError
from analytics.gram_system import GroupIndex
from analytics.kernel_core import KernelFamily, MarginalDistribution, build_kernels, uniform_kernels
from analytics.model_select import Metamodel
from analytics.sensitivity import sensitivity_report
from config import OUTPUT_FILES
from data.artifacts import (model_from_dict, model_to_dict, read_json, read_model, write_error, write_json,
                            write_model, write_sobol)
from data.datasets import Dataset, load_dataset, load_marginals, save_dataset


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_well_formed_dataset(tmp_path):
    path = write(tmp_path, "train.csv", "y,x1,x2\n1.5,0.1,0.2\n-2,0.9,1\n0.25,0,0.5\n")
    dataset = load_dataset(path)
    assert dataset.n == 3 and dataset.d == 2
    assert dataset.Y.tolist() == [1.5, -2.0, 0.25]
    assert dataset.X[1].tolist() == [0.9, 1.0]
    assert dataset.name == "train"


@pytest.mark.parametrize("cell", ["NaN", "abc", "inf", ""])
def test_bad_cell_reports_line_and_column(tmp_path, cell):
    path = write(tmp_path, "bad.csv", f"y,x1,x2\n1,0.1,0.2\n2,{cell},0.3\n")
    with pytest.raises(ParseError) as info:
        load_dataset(path)
    assert info.value.line == 3
    assert info.value.column == "x1"


@pytest.mark.parametrize("header", ["x1,y\n", "y,x2\n", "Y,X1\n", "y,x1,x3\n"])
def test_bad_header(tmp_path, header):
    path = write(tmp_path, "bad.csv", header + "1,0.5\n2,0.6\n")
    with pytest.raises(ParseError) as info:
        load_dataset(path)
    assert info.value.line == 1


def test_ragged_row(tmp_path):
    path = write(tmp_path, "ragged.csv", "y,x1\n1,0.5\n2,0.6,0.7\n")
    with pytest.raises(ParseError):
        load_dataset(path)


def test_out_of_range_and_tiny_datasets(tmp_path):
    with pytest.raises(ValidationError):
        load_dataset(write(tmp_path, "range.csv", "y,x1\n1,0.5\n2,1.5\n"))
    with pytest.raises(ValidationError):
        load_dataset(write(tmp_path, "one.csv", "y,x1\n1,0.5\n"))
    with pytest.raises(ValidationError):
        load_dataset(tmp_path / "missing.csv")


def test_marginals_widen_the_admissible_range(tmp_path):
    path = write(tmp_path, "wide.csv", "y,x1\n1,-0.5\n2,1.5\n")
    marginal = MarginalDistribution.from_table([-1.0, 0.0, 2.0], [1, 1, 1])
    assert load_dataset(path, [marginal]).X[:, 0].tolist() == [-0.5, 1.5]


def test_save_then_load_is_exact(tmp_path, rng):
    dataset = Dataset(rng.normal(size=6), rng.uniform(size=(6, 3)), "sim")
    loaded = load_dataset(save_dataset(dataset, tmp_path / "sim.csv"))
    assert np.array_equal(loaded.Y, dataset.Y)
    assert np.array_equal(loaded.X, dataset.X)


def test_shared_and_per_coordinate_marginal_tables(tmp_path):
    shared = load_marginals(write(tmp_path, "m.csv", "point,weight\n0,1\n0.5,2\n1,1\n"), 3)
    assert len(shared) == 3 and shared[0] is shared[2]
    assert shared[0].weights.tolist() == [0.25, 0.5, 0.25]

    table = "coordinate,point,weight,lo,hi\n1,0,1,0,1\n1,1,1,0,1\n2,-1,1,-2,2\n2,1,3,-2,2\n"
    per = load_marginals(write(tmp_path, "m2.csv", table), 2)
    assert per[1].support == (-2.0, 2.0)
    assert per[1].weights.tolist() == [0.25, 0.75]
    with pytest.raises(ValidationError):
        load_marginals(write(tmp_path, "m3.csv", table), 3)
    with pytest.raises(ParseError):
        load_marginals(write(tmp_path, "m4.csv", "point,mass\n0,1\n"), 1)


def _model(rng, kernels):
    X = rng.uniform(size=(6, 2))
    return Metamodel(0.7, {GroupIndex.of(1): rng.normal(size=6), GroupIndex.of(1, 2): rng.normal(size=6)},
                     X, kernels, procedure="gs", penalties={"mu": 0.1, "gamma": 0.0})


def test_model_round_trip_predicts_identically(tmp_path, rng):
    model = _model(rng, uniform_kernels(KernelFamily("matern", (3.0,)), 2))
    path = write_model(model, tmp_path, {"pe": 0.5})
    assert path.name == OUTPUT_FILES["model"]
    restored = read_model(path)
    X_new = rng.uniform(size=(20, 2))
    assert np.max(np.abs(restored.predict(X_new) - model.predict(X_new))) <= 1e-12
    assert restored.support == model.support
    assert restored.penalties == {"mu": 0.1, "gamma": 0.0}
    assert read_json(path)["selection"] == {"pe": 0.5}


def test_model_round_trip_with_table_marginals(rng):
    marginal = MarginalDistribution.from_table([0.0, 0.3, 1.0], [0.2, 0.5, 0.3])
    model = _model(rng, build_kernels(KernelFamily("gaussian"), [marginal, marginal]))
    restored = model_from_dict(json.loads(json.dumps(model_to_dict(model))))
    X_new = rng.uniform(size=(5, 2))
    assert np.max(np.abs(restored.predict(X_new) - model.predict(X_new))) <= 1e-12


def test_malformed_model_description():
    with pytest.raises(ValidationError):
        model_from_dict({"f0": 1.0})


def test_json_output_is_deterministic(tmp_path, rng):
    model = _model(rng, uniform_kernels(KernelFamily("brownian"), 2))
    report = sensitivity_report(model)
    first = write_sobol(report, tmp_path / "a").read_text()
    second = write_sobol(report, tmp_path / "b").read_text()
    assert first == second
    payload = json.loads(first)
    assert sum(payload["indices"].values()) == pytest.approx(1.0)
    assert set(payload["global_indices"]) == {"1", "2"}


def test_nan_becomes_null(tmp_path):
    path = write_json({"pe": float("nan"), "values": np.array([1.0, np.inf])}, tmp_path / "x.json")
    assert read_json(path) == {"pe": None, "values": [1.0, None]}


def test_invalid_json_is_a_parse_error(tmp_path):
    with pytest.raises(ParseError):
        read_json(write(tmp_path, "broken.json", "{\"a\": 1,,}"))


def test_error_record(tmp_path):
    path = write_error(DomainError("x outside support", module="analytics.kernel_core"), tmp_path)
    assert read_json(path) == {"category": "domain", "module": "analytics.kernel_core",
                               "message": "x outside support", "details": {}}
    path = write_error(RuntimeError("boom"), tmp_path)
    assert read_json(path)["category"] == "internal"
