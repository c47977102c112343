"""Artifact layout and (de)serialization under one output directory.

Storage layout:
  out/
    data/metadata.json               generation metadata (seeds, steps, dt, constants)
    data/train/series_000.csv        simulated trajectories, t,x1..x8,u1..u5
    data/test/series_000.csv
    datasets/n{size}.csv + .json     regression pairs + normalization sidecar
    models/{name}-n{size}/model_000.json, loss_000.csv
    analysis/{group}/...
    evaluation/...

CSV files: line 1 is a "# " provenance comment, line 2 the column header.
JSON files: sorted keys, 2-space indent, written through a tmp file.
"""

from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .models import FEATURE_NAMES, OUTPUT_NAMES, Dataset, NormStats, TimeSeries
from .nn import TrainedModel

SERIES_HEADER = ("t",) + FEATURE_NAMES
DATASET_HEADER = FEATURE_NAMES + OUTPUT_NAMES
FLOAT_FMT = "%.17g"


class Layout:
    def __init__(self, root: Path) -> None:
        self.root = Path(root)

    @property
    def data(self) -> Path:
        return self.root / "data"

    @property
    def metadata(self) -> Path:
        return self.data / "metadata.json"

    def series(self, split: str, index: int) -> Path:
        return self.data / split / f"series_{index:03d}.csv"

    def dataset(self, size: int) -> Path:
        return self.root / "datasets" / f"n{size}.csv"

    @property
    def models(self) -> Path:
        return self.root / "models"

    def model(self, group: str, replicate: int) -> Path:
        return self.models / group / f"model_{replicate:03d}.json"

    def loss(self, group: str, replicate: int) -> Path:
        return self.models / group / f"loss_{replicate:03d}.csv"

    def analysis(self, group: str) -> Path:
        return self.root / "analysis" / group

    @property
    def evaluation(self) -> Path:
        return self.root / "evaluation"

    def groups(self) -> list[str]:
        if not self.models.is_dir():
            return []
        return sorted(p.name for p in self.models.iterdir() if p.is_dir())


def _provenance_line(provenance: dict[str, Any]) -> str:
    return "# " + " ".join(f"{k}={provenance[k]}" for k in sorted(provenance))


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_json(path: Path, data: dict, provenance: Optional[dict] = None) -> None:
    body = dict(data)
    if provenance is not None:
        body["provenance"] = provenance
    _write_text(path, json.dumps(body, sort_keys=True, indent=2) + "\n")


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_array(
    path: Path, header: Sequence[str], array: np.ndarray, provenance: dict[str, Any]
) -> None:
    buf = io.StringIO()
    np.savetxt(
        buf,
        np.atleast_2d(array),
        fmt=FLOAT_FMT,
        delimiter=",",
        header=_provenance_line(provenance) + "\n" + ",".join(header),
        comments="",
    )
    _write_text(path, buf.getvalue())


def read_array(path: Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)


def write_table(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    provenance: dict[str, Any],
) -> None:
    """CSV with a text label column; floats use the same exact format as arrays."""
    buf = io.StringIO()
    buf.write(_provenance_line(provenance) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([FLOAT_FMT % v if isinstance(v, float) else v for v in row])
    _write_text(path, buf.getvalue())


def save_series(path: Path, series: TimeSeries, provenance: dict[str, Any]) -> None:
    write_array(path, SERIES_HEADER, series.table(), provenance)


def load_series(
    path: Path, dt: float, seed: Optional[int] = None, attempt: int = 0
) -> TimeSeries:
    return TimeSeries.from_table(read_array(path), dt=dt, seed=seed, attempt=attempt)


def load_split(layout: Layout, split: str) -> list[TimeSeries]:
    """All series of one split in index order, using dt, seeds and attempts from metadata."""
    meta = read_json(layout.metadata)
    info = meta[split]
    attempts = info.get("attempts", [0] * len(info["seeds"]))
    return [
        load_series(layout.series(split, i), dt=meta["dt"], seed=seed, attempt=attempt)
        for i, (seed, attempt) in enumerate(zip(info["seeds"], attempts))
    ]


def save_dataset(layout: Layout, size: int, dataset: Dataset, provenance: dict[str, Any]) -> None:
    path = layout.dataset(size)
    write_array(path, DATASET_HEADER, np.hstack([dataset.inputs, dataset.targets]), provenance)
    write_json(
        path.with_suffix(".json"),
        {"normalization": dataset.stats.to_dict(), "metadata": dataset.metadata, "rows": len(dataset)},
        provenance,
    )


def load_dataset(layout: Layout, size: int) -> Dataset:
    path = layout.dataset(size)
    table = read_array(path)
    side = read_json(path.with_suffix(".json"))
    n_in = len(FEATURE_NAMES)
    return Dataset(
        inputs=table[:, :n_in],
        targets=table[:, n_in:],
        stats=NormStats.from_dict(side["normalization"]),
        metadata=side.get("metadata", {}),
    )


def save_model(
    layout: Layout, group: str, replicate: int, model: TrainedModel, provenance: dict[str, Any]
) -> None:
    write_json(layout.model(group, replicate), model.to_dict(), provenance)
    history = np.column_stack([np.arange(1, len(model.loss_history) + 1), model.loss_history])
    write_array(layout.loss(group, replicate), ("epoch", "cost"), history.reshape(-1, 2), provenance)


def load_models(layout: Layout, group: str) -> list[TrainedModel]:
    paths = sorted((layout.models / group).glob("model_*.json"))
    if not paths:
        raise FileNotFoundError(f"no models in {layout.models / group}")
    out = []
    for p in paths:
        loss_path = p.with_name(p.name.replace("model_", "loss_").replace(".json", ".csv"))
        history = read_array(loss_path)[:, 1].tolist() if _has_rows(loss_path) else []
        out.append(TrainedModel.from_dict(read_json(p), history))
    return out


def _has_rows(path: Path) -> bool:
    if not path.exists():
        return False
    with open(path, encoding="utf-8") as f:
        return sum(1 for _ in f) > 2


def remove_stale(directory: Path, pattern: str, keep: set[str]) -> None:
    """Delete files matching pattern whose names are not in keep."""
    if not directory.is_dir():
        return
    for p in directory.glob(pattern):
        if p.name not in keep:
            os.remove(p)
