import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.getcwd(), "src"))

import potline.storage as storage
from potline.models import Dataset, TimeSeries
from potline.nn import TrainConfig, TrainedModel

PROV = {"config_hash": "abc123", "seed": 4, "version": "0.1.0"}


def _series(steps=3, seed=None):
    rng = np.random.default_rng(0)
    return TimeSeries(
        states=rng.uniform(1, 2, size=(steps + 1, 8)),
        inputs=rng.uniform(0, 1, size=(steps, 5)),
        dt=30.0,
        seed=seed,
    )


def test_layout_paths(tmp_path):
    layout = storage.Layout(tmp_path)
    assert layout.series("train", 3).name == "series_003.csv"
    assert layout.dataset(10).name == "n10.csv"
    assert layout.model("sparse-n10", 7).parts[-2:] == ("sparse-n10", "model_007.json")
    assert layout.loss("sparse-n10", 7).name == "loss_007.csv"
    assert layout.groups() == []
    (layout.models / "b").mkdir(parents=True)
    (layout.models / "a").mkdir()
    assert layout.groups() == ["a", "b"]


def test_array_files_carry_provenance_and_header(tmp_path):
    p = tmp_path / "x.csv"
    arr = np.array([[1.0, 0.1], [1 / 3, -2.5e-17]])
    storage.write_array(p, ("a", "b"), arr, PROV)
    lines = p.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "# config_hash=abc123 seed=4 version=0.1.0"
    assert lines[1] == "a,b"
    assert np.array_equal(storage.read_array(p), arr)


def test_series_round_trip_is_exact(tmp_path):
    ts = _series()
    p = tmp_path / "s.csv"
    storage.save_series(p, ts, PROV)
    back = storage.load_series(p, dt=30.0, seed=2)
    assert np.array_equal(back.states, ts.states)
    assert np.array_equal(back.inputs, ts.inputs)
    assert back.seed == 2
    # header + provenance + steps + 1 rows
    assert len(p.read_text(encoding="utf-8").splitlines()) == 2 + 4


def test_load_split_uses_metadata(tmp_path):
    layout = storage.Layout(tmp_path)
    for i in range(2):
        storage.save_series(layout.series("test", i), _series(), PROV)
    storage.write_json(layout.metadata, {"dt": 30.0, "test": {"steps": 3, "seeds": [100, 101]}}, PROV)
    series = storage.load_split(layout, "test")
    assert [s.seed for s in series] == [100, 101]
    assert all(s.dt == 30.0 for s in series)


def test_json_sorted_with_provenance(tmp_path):
    p = tmp_path / "d" / "x.json"
    storage.write_json(p, {"b": 1, "a": [1, 2]}, PROV)
    text = p.read_text(encoding="utf-8")
    assert text.index('"a"') < text.index('"b"') < text.index('"provenance"')
    assert storage.read_json(p)["provenance"] == PROV
    assert not p.with_suffix(".json.tmp").exists()


def test_table_rows_and_float_format(tmp_path):
    p = tmp_path / "t.csv"
    storage.write_table(p, ("model", "seed", "score"), [("dense-n1", 3, 0.1), ("oracle", "", 2.0)], PROV)
    lines = p.read_text(encoding="utf-8").splitlines()
    assert lines[1] == "model,seed,score"
    assert lines[2] == "dense-n1,3,0.10000000000000001"
    assert lines[3] == "oracle,,2"


def test_dataset_round_trip(tmp_path):
    layout = storage.Layout(tmp_path)
    rng = np.random.default_rng(1)
    ds = Dataset(inputs=rng.normal(size=(6, 13)), targets=rng.normal(size=(6, 8)), metadata={"series": 1})
    storage.save_dataset(layout, 1, ds, PROV)
    back = storage.load_dataset(layout, 1)
    assert np.array_equal(back.inputs, ds.inputs) and np.array_equal(back.targets, ds.targets)
    assert np.array_equal(back.stats.input_std, ds.stats.input_std)
    assert back.metadata == {"series": 1}


def test_models_round_trip_with_history(tmp_path):
    layout = storage.Layout(tmp_path)
    rng = np.random.default_rng(2)
    ds = Dataset(inputs=rng.normal(size=(20, 13)), targets=rng.normal(size=(20, 8)))
    for r in range(2):
        cfg = TrainConfig(lambdas=1e-3, epochs=2, batch_size=8, seed=r)
        storage.save_model(layout, "sparse-n1", r, TrainedModel.fit(ds, (13, 4, 8), cfg, name="sparse-n1"), PROV)
    models = storage.load_models(layout, "sparse-n1")
    assert [m.seed for m in models] == [0, 1]
    assert all(len(m.loss_history) == 2 for m in models)
    assert storage.read_json(layout.model("sparse-n1", 0))["network"]["mask"]

    with pytest.raises(FileNotFoundError):
        storage.load_models(layout, "dense-n1")


def test_remove_stale_keeps_listed(tmp_path):
    for name in ("model_000.json", "model_001.json", "model_002.json"):
        (tmp_path / name).write_text("{}", encoding="utf-8")
    storage.remove_stale(tmp_path, "model_*.json", {"model_000.json", "model_001.json"})
    assert sorted(p.name for p in tmp_path.iterdir()) == ["model_000.json", "model_001.json"]
    storage.remove_stale(tmp_path / "missing", "*", set())
