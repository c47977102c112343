"""Experiment configuration read from TOML.

Every key is optional; defaults reproduce the full experiment (five nested
training groups, 20 test series of 1000 steps, 20 dense and 20 sparse
replicates). Unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json
import tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Union

from .errors import ConfigError
from .excitation import MAX_ATTEMPTS, ControlPolicy, InitSampler, InputChannel
from .models import N_FEATURES, N_STATES
from .nn import DENSE_SHAPE, TrainConfig
from .sim import SimConstants

DEFAULT_OUT = "potline-out"


@dataclass(frozen=True)
class DataSection:
    train_series: tuple[int, ...] = (1, 2, 5, 7, 10)
    test_series: int = 20
    train_steps: int = 999
    test_steps: int = 1000
    test_seed_offset: int = 10_000
    # Runs per series before a divergence aborts the simulation.
    max_attempts: int = MAX_ATTEMPTS

    @property
    def n_train(self) -> int:
        """Series to simulate; group n uses the first n."""
        return max(self.train_series)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    shape: tuple[int, ...] = DENSE_SHAPE
    lambdas: Union[float, tuple[float, ...]] = 0.0
    replicates: int = 20
    # Overrides training.prune_threshold for this model family.
    prune_threshold: Optional[float] = None

    def group(self, size: int) -> str:
        return f"{self.name}-n{size}"


@dataclass(frozen=True)
class TrainingSection:
    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int = 128
    prune_threshold: float = 1e-3
    optimizer: str = "adam"
    lr_decay: float = 0.01


@dataclass(frozen=True)
class EvaluationSection:
    horizons: tuple[int, ...] = (200, 300, 500, 1000)
    band_series: int = 0


def _default_models() -> tuple[ModelSpec, ...]:
    return (
        ModelSpec(name="dense", lambdas=0.0, prune_threshold=0.0),
        ModelSpec(name="sparse", lambdas=1e-3),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = DEFAULT_OUT
    consts: SimConstants = field(default_factory=SimConstants)
    data: DataSection = field(default_factory=DataSection)
    models: tuple[ModelSpec, ...] = field(default_factory=_default_models)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    sampler: InitSampler = field(default_factory=InitSampler)
    policy: ControlPolicy = field(default_factory=ControlPolicy.standard)

    def train_sampler(self) -> InitSampler:
        return replace(self.sampler, seed=self.seed)

    def test_sampler(self) -> InitSampler:
        return replace(self.sampler, seed=self.seed + self.data.test_seed_offset)

    def train_config(self, spec: ModelSpec, replicate: int, size: int) -> TrainConfig:
        """Replicate r of a group gets seed base + 1000 * size + r."""
        t = self.training
        return TrainConfig(
            lambdas=spec.lambdas,
            learning_rate=t.learning_rate,
            epochs=t.epochs,
            batch_size=t.batch_size,
            prune_threshold=t.prune_threshold if spec.prune_threshold is None else spec.prune_threshold,
            seed=self.seed + 1000 * size + replicate,
            optimizer=t.optimizer,
            lr_decay=t.lr_decay,
        )

    def with_overrides(
        self, seed: Optional[int] = None, out: Optional[str] = None
    ) -> "ExperimentConfig":
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = seed
        if out is not None:
            changes["out"] = out
        return replace(self, **changes) if changes else self

    def validate(self) -> None:
        d = self.data
        if not d.train_series or any(n < 1 for n in d.train_series):
            raise ConfigError(f"data.train_series must list sizes >= 1, got {list(d.train_series)}")
        if d.test_series < 1:
            raise ConfigError(f"data.test_series must be >= 1, got {d.test_series}")
        if d.train_steps < 2:
            raise ConfigError(f"data.train_steps must be >= 2, got {d.train_steps}")
        if d.test_steps < 1:
            raise ConfigError(f"data.test_steps must be >= 1, got {d.test_steps}")
        if d.test_seed_offset < d.n_train:
            raise ConfigError("data.test_seed_offset must exceed the number of training series")
        if d.max_attempts < 1:
            raise ConfigError(f"data.max_attempts must be >= 1, got {d.max_attempts}")
        if not self.models:
            raise ConfigError("at least one [[models]] entry is required")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate model names: {names}")
        for m in self.models:
            if not m.name or "/" in m.name:
                raise ConfigError(f"invalid model name {m.name!r}")
            if len(m.shape) < 2 or m.shape[0] != N_FEATURES or m.shape[-1] != N_STATES:
                raise ConfigError(
                    f"model {m.name}: shape must start at {N_FEATURES} and end at {N_STATES}, "
                    f"got {list(m.shape)}"
                )
            if any(w < 1 for w in m.shape):
                raise ConfigError(f"model {m.name}: layer widths must be >= 1")
            if m.replicates < 1:
                raise ConfigError(f"model {m.name}: replicates must be >= 1")
            # TrainConfig checks lambdas, learning rate and the rest.
            self.train_config(m, 0, 1).layer_lambdas(len(m.shape) - 1)
        e = self.evaluation
        if not e.horizons or any(h < 1 for h in e.horizons):
            raise ConfigError(f"evaluation.horizons must be >= 1, got {list(e.horizons)}")
        if max(e.horizons) > d.test_steps:
            raise ConfigError(
                f"horizon {max(e.horizons)} exceeds data.test_steps = {d.test_steps}"
            )
        if not 0 <= e.band_series < d.test_series:
            raise ConfigError(f"evaluation.band_series must index a test series, got {e.band_series}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out": self.out,
            "simulator": self.consts.to_dict(),
            "data": asdict(self.data),
            "models": [asdict(m) for m in self.models],
            "training": asdict(self.training),
            "evaluation": asdict(self.evaluation),
            "excitation": {"init": self.sampler.to_dict(), **self.policy.to_dict()},
        }


def config_hash(config: ExperimentConfig) -> str:
    """Names the experiment: seed and output directory are left out."""
    body = config.to_dict()
    body.pop("seed")
    body.pop("out")
    body["excitation"]["init"].pop("seed", None)
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _check_keys(table: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _section(cls, table: Mapping[str, Any], where: str, tuples: tuple[str, ...] = ()):
    _check_keys(table, {f.name for f in fields(cls)}, where)
    values = {k: tuple(v) if k in tuples else v for k, v in table.items()}
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigError(f"{where}: {e}") from e


def _lambdas(value: Any, where: str) -> Union[float, tuple[float, ...]]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, list):
        return tuple(float(v) for v in value)
    raise ConfigError(f"{where}.lambdas must be a number or a list, got {value!r}")


def _simulator(table: Mapping[str, Any]) -> SimConstants:
    _check_keys(table, {"dt", "crit_pr_x2", "constants"}, "[simulator]")
    overrides = dict(table.get("constants", {}))
    for key in ("dt", "crit_pr_x2"):
        if key in table:
            overrides[key] = table[key]
    return SimConstants().with_overrides(overrides)


def _excitation(table: Mapping[str, Any]) -> tuple[InitSampler, ControlPolicy]:
    _check_keys(table, {"init", "channels"}, "[excitation]")
    init = dict(table.get("init", {}))
    _check_keys(init, {f.name for f in fields(InitSampler)} - {"seed"}, "[excitation.init]")
    sampler = InitSampler(**{k: tuple(v) for k, v in init.items()})

    policy = ControlPolicy.standard()
    if "channels" in table:
        chans = []
        for i, ch in enumerate(table["channels"]):
            where = f"[[excitation.channels]] #{i + 1}"
            chans.append(_section(InputChannel, ch, where, tuples=("noise",)))
        policy = ControlPolicy(channels=tuple(chans))
    return sampler, policy


def parse_config(raw: Mapping[str, Any]) -> ExperimentConfig:
    _check_keys(
        raw,
        {"seed", "out", "simulator", "data", "models", "training", "evaluation", "excitation"},
        "top level",
    )
    kwargs: dict[str, Any] = {}
    if "seed" in raw:
        kwargs["seed"] = int(raw["seed"])
    if "out" in raw:
        kwargs["out"] = str(raw["out"])
    if "simulator" in raw:
        kwargs["consts"] = _simulator(raw["simulator"])
    if "data" in raw:
        kwargs["data"] = _section(DataSection, raw["data"], "[data]", tuples=("train_series",))
    if "models" in raw:
        specs = []
        for i, m in enumerate(raw["models"]):
            where = f"[[models]] #{i + 1}"
            _check_keys(m, {"name", "shape", "lambdas", "replicates", "prune_threshold"}, where)
            if "name" not in m:
                raise ConfigError(f"{where}: name is required")
            specs.append(
                ModelSpec(
                    name=str(m["name"]),
                    shape=tuple(int(w) for w in m.get("shape", DENSE_SHAPE)),
                    lambdas=_lambdas(m.get("lambdas", 0.0), where),
                    replicates=int(m.get("replicates", 20)),
                    prune_threshold=(
                        float(m["prune_threshold"]) if "prune_threshold" in m else None
                    ),
                )
            )
        kwargs["models"] = tuple(specs)
    if "training" in raw:
        kwargs["training"] = _section(TrainingSection, raw["training"], "[training]")
    if "evaluation" in raw:
        kwargs["evaluation"] = _section(
            EvaluationSection, raw["evaluation"], "[evaluation]", tuples=("horizons",)
        )
    if "excitation" in raw:
        kwargs["sampler"], kwargs["policy"] = _excitation(raw["excitation"])

    config = ExperimentConfig(**kwargs)
    config.validate()
    return config


def load_config(path: Optional[Path]) -> ExperimentConfig:
    """Read and validate a TOML file; None gives the defaults."""
    if path is None:
        config = ExperimentConfig()
        config.validate()
        return config
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return parse_config(raw)
