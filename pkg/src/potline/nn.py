"""Feed-forward ReLU networks trained with an MSE + per-layer l1 cost.

Weights follow the row-out/column-in layout: W[j] has shape
(shape[j + 1], shape[j]) and a batch X of shape (N, shape[0]) propagates as
Z = relu(X @ W.T + b). The output layer is affine.

Every weight matrix has a boolean mask; masked entries are exactly zero and
stay zero through training.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, NonFiniteError
from .models import FEATURE_NAMES, N_FEATURES, N_STATES, OUTPUT_NAMES, Dataset, NormStats

DENSE_SHAPE = (13, 15, 14, 12, 8)
OPTIMIZERS = ("adam", "sgd")


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (init, shuffle) generators derived from one seed."""
    init_ss, shuffle_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(shuffle_ss)


@dataclass
class MlpModel:
    shape: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    masks: list[np.ndarray]

    def __post_init__(self) -> None:
        self.shape = tuple(int(s) for s in self.shape)
        if len(self.shape) < 2:
            raise ValueError(f"a network needs at least 2 layers, got shape {self.shape}")
        if len(self.weights) != len(self.shape) - 1:
            raise ValueError(f"{len(self.weights)} weight matrices for shape {self.shape}")
        for j, (w, b, m) in enumerate(zip(self.weights, self.biases, self.masks)):
            expect = (self.shape[j + 1], self.shape[j])
            if w.shape != expect or m.shape != expect:
                raise ValueError(f"layer {j}: weight/mask shape {w.shape}/{m.shape}, expected {expect}")
            if b.shape != (self.shape[j + 1],):
                raise ValueError(f"layer {j}: bias shape {b.shape}, expected ({self.shape[j + 1]},)")

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "MlpModel":
        shape = tuple(shape)
        return cls(
            shape=shape,
            weights=[np.zeros((o, i)) for i, o in zip(shape[:-1], shape[1:])],
            biases=[np.zeros(o) for o in shape[1:]],
            masks=[np.ones((o, i), dtype=bool) for i, o in zip(shape[:-1], shape[1:])],
        )

    @classmethod
    def initialize(cls, shape: Sequence[int], rng: np.random.Generator) -> "MlpModel":
        """He-uniform weights U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases."""
        model = cls.zeros(shape)
        for j, w in enumerate(model.weights):
            limit = np.sqrt(6.0 / w.shape[1])
            model.weights[j] = rng.uniform(-limit, limit, size=w.shape)
        return model

    @property
    def n_layers(self) -> int:
        """Number of weight matrices."""
        return len(self.weights)

    def copy(self) -> "MlpModel":
        return MlpModel(
            shape=self.shape,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            masks=[m.copy() for m in self.masks],
        )

    def active(self) -> list[np.ndarray]:
        """Boolean adjacency per layer: unmasked and nonzero."""
        return [(w != 0) & m for w, m in zip(self.weights, self.masks)]

    def to_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "mask": [m.astype(int).tolist() for m in self.masks],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpModel":
        shape = tuple(data["shape"])
        weights = [
            np.asarray(w, dtype=float).reshape(o, i)
            for w, i, o in zip(data["weights"], shape[:-1], shape[1:])
        ]
        return cls(
            shape=shape,
            weights=weights,
            biases=[np.asarray(b, dtype=float) for b in data["biases"]],
            masks=[
                np.asarray(m, dtype=bool).reshape(w.shape)
                for m, w in zip(data.get("mask") or [np.ones(w.shape) for w in weights], weights)
            ],
        )


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


@dataclass
class TrainConfig:
    lambdas: Union[float, tuple[float, ...]] = 0.0
    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int = 128
    prune_threshold: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    # Learning rate decays exponentially to lr_decay * learning_rate at the last epoch.
    lr_decay: float = 0.01

    def __post_init__(self) -> None:
        if not isinstance(self.lambdas, (int, float)):
            self.lambdas = tuple(float(v) for v in self.lambdas)
        self.validate()

    def validate(self) -> None:
        lams = (self.lambdas,) if isinstance(self.lambdas, (int, float)) else self.lambdas
        if any(not np.isfinite(v) or v < 0 for v in lams):
            raise ConfigError(f"l1 coefficients must be >= 0, got {self.lambdas}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.prune_threshold < 0:
            raise ConfigError(f"prune_threshold must be >= 0, got {self.prune_threshold}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must be in (0, 1], got {self.lr_decay}")

    def layer_lambdas(self, n_layers: int) -> list[float]:
        if isinstance(self.lambdas, (int, float)):
            return [float(self.lambdas)] * n_layers
        if len(self.lambdas) != n_layers:
            raise ConfigError(f"{len(self.lambdas)} l1 coefficients for {n_layers} weight layers")
        return list(self.lambdas)

    def learning_rate_at(self, epoch: int) -> float:
        if self.epochs <= 1:
            return self.learning_rate
        return self.learning_rate * self.lr_decay ** (epoch / (self.epochs - 1))

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.lambdas, tuple):
            d["lambdas"] = list(self.lambdas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)


def _forward_cache(model: MlpModel, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer, input first; the last entry is the output."""
    acts = [x]
    last = model.n_layers - 1
    for j, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w.T + b
        acts.append(z if j == last else np.maximum(z, 0.0))
    return acts


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Network output for one input vector or a batch of row vectors."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.shape[0]:
        raise ValueError(f"input has {x.shape[-1]} features, network expects {model.shape[0]}")
    if x.ndim == 1:
        return _forward_cache(model, x[None, :])[-1][0]
    return _forward_cache(model, x)[-1]


def mse(model: MlpModel, inputs: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean((forward(model, inputs) - targets) ** 2))


def l1_penalty(model: MlpModel, lambdas: Sequence[float]) -> float:
    return float(sum(lam * np.abs(w).sum() for lam, w in zip(lambdas, model.weights)))


def loss_and_gradients(
    model: MlpModel, inputs: np.ndarray, targets: np.ndarray, lambdas: Sequence[float]
) -> tuple[float, Gradients]:
    """Cost = mean squared error over all entries + sum_j lambda_j * |W_j|_1."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if len(inputs) == 0:
        raise ValueError("empty batch")
    acts = _forward_cache(model, inputs)
    err = acts[-1] - targets
    cost = float(np.mean(err**2)) + l1_penalty(model, lambdas)

    g_w: list[np.ndarray] = [np.empty(0)] * model.n_layers
    g_b: list[np.ndarray] = [np.empty(0)] * model.n_layers
    delta = 2.0 * err / err.size
    for j in range(model.n_layers - 1, -1, -1):
        g_w[j] = (delta.T @ acts[j] + lambdas[j] * np.sign(model.weights[j])) * model.masks[j]
        g_b[j] = delta.sum(axis=0)
        if j > 0:
            delta = (delta @ model.weights[j]) * (acts[j] > 0)
    return cost, Gradients(weights=g_w, biases=g_b)


class Adam:
    def __init__(self, model: MlpModel, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        params = model.weights + model.biases
        self._m = [np.zeros_like(p) for p in params]
        self._v = [np.zeros_like(p) for p in params]

    def step(self, model: MlpModel, grads: Gradients, lr: float) -> None:
        self.t += 1
        params = model.weights + model.biases
        for i, (p, g) in enumerate(zip(params, grads.weights + grads.biases)):
            self._m[i] = self.beta1 * self._m[i] + (1 - self.beta1) * g
            self._v[i] = self.beta2 * self._v[i] + (1 - self.beta2) * g * g
            m_hat = self._m[i] / (1 - self.beta1**self.t)
            v_hat = self._v[i] / (1 - self.beta2**self.t)
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Sgd:
    def step(self, model: MlpModel, grads: Gradients, lr: float) -> None:
        for p, g in zip(model.weights + model.biases, grads.weights + grads.biases):
            p -= lr * g


def train(
    model: MlpModel, inputs: np.ndarray, targets: np.ndarray, config: TrainConfig
) -> tuple[MlpModel, list[float]]:
    """Mini-batch training on normalized data.

    Returns a trained copy and the full-batch cost after every epoch. Batch
    order comes from the config seed, so two runs with the same seed give
    bit-identical weights.
    """
    config.validate()
    model = model.copy()
    lambdas = config.layer_lambdas(model.n_layers)
    _, rng = _streams(config.seed)
    opt = Adam(model) if config.optimizer == "adam" else Sgd()
    n = len(inputs)
    history: list[float] = []

    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            cost, grads = loss_and_gradients(model, inputs[idx], targets[idx], lambdas)
            if not np.isfinite(cost):
                raise NonFiniteError(
                    f"non-finite cost at epoch {epoch}, batch {b}", epoch=epoch, batch=b
                )
            opt.step(model, grads, lr)
            for w, m in zip(model.weights, model.masks):
                w *= m
        history.append(mse(model, inputs, targets) + l1_penalty(model, lambdas))
    return model, history


def prune(model: MlpModel, threshold: float) -> MlpModel:
    """Zero and mask every |w| < threshold; clear biases of disconnected neurons.

    A zero threshold returns an unchanged copy, biases included.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    out = model.copy()
    if threshold == 0:
        return out
    for w, m in zip(out.weights, out.masks):
        small = np.abs(w) < threshold
        w[small] = 0.0
        m[small] = False
    active = out.active()
    for j in range(out.n_layers - 1):
        incoming = active[j].any(axis=1)
        outgoing = active[j + 1].any(axis=0)
        out.biases[j][~incoming & ~outgoing] = 0.0
    return out


def reachability(model: MlpModel) -> np.ndarray:
    """(n_inputs, n_outputs) boolean: input j has a path of active edges to output i."""
    active = model.active()
    reach = active[0].T.astype(np.int64)
    for a in active[1:]:
        reach = ((reach @ a.T.astype(np.int64)) > 0).astype(np.int64)
    return reach.astype(bool)


def pruned_neurons(model: MlpModel) -> list[np.ndarray]:
    """Per hidden layer, True where the weight row or the outgoing column is all zero."""
    active = model.active()
    return [
        ~active[j].any(axis=1) | ~active[j + 1].any(axis=0)
        for j in range(model.n_layers - 1)
    ]


@dataclass
class SparsityReport:
    total_weights: int
    nonzero_weights: int
    pruned_fraction: float
    layer_pruned_fraction: list[float]
    hidden_neurons: list[int]
    pruned_neurons: list[int]
    features_per_output: dict[str, list[str]]
    feature_pruned_fraction: dict[str, float]
    effective_shape: list[int]
    matrix_ops: int
    effective_matrix_ops: int

    @property
    def neuron_pruned_fraction(self) -> list[float]:
        return [p / n if n else 0.0 for p, n in zip(self.pruned_neurons, self.hidden_neurons)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["neuron_pruned_fraction"] = self.neuron_pruned_fraction
        return d


def sparsity_report(model: MlpModel) -> SparsityReport:
    from .analysis import matrix_op_count

    active = model.active()
    total = sum(a.size for a in active)
    nonzero = sum(int(a.sum()) for a in active)
    pruned = pruned_neurons(model)
    reach = reachability(model)
    in_names = FEATURE_NAMES if model.shape[0] == N_FEATURES else tuple(
        f"in{i + 1}" for i in range(model.shape[0])
    )
    out_names = OUTPUT_NAMES if model.shape[-1] == N_STATES else tuple(
        f"out{i + 1}" for i in range(model.shape[-1])
    )

    features = {
        out_names[i]: [in_names[j] for j in np.flatnonzero(reach[:, i])]
        for i in range(model.shape[-1])
    }
    effective = (
        [int(reach.any(axis=1).sum())]
        + [int((~p).sum()) for p in pruned]
        + [int(model.shape[-1])]
    )
    return SparsityReport(
        total_weights=int(total),
        nonzero_weights=int(nonzero),
        pruned_fraction=1.0 - nonzero / total if total else 0.0,
        layer_pruned_fraction=[1.0 - float(a.mean()) for a in active],
        hidden_neurons=list(model.shape[1:-1]),
        pruned_neurons=[int(p.sum()) for p in pruned],
        features_per_output=features,
        feature_pruned_fraction={
            name: 1.0 - len(feats) / model.shape[0] for name, feats in features.items()
        },
        effective_shape=effective,
        matrix_ops=matrix_op_count(model.shape),
        effective_matrix_ops=matrix_op_count(effective),
    )


@dataclass
class TrainedModel:
    """A pruned network plus what it needs to act on physical units."""

    network: MlpModel
    stats: NormStats
    config: TrainConfig
    name: str = ""
    loss_history: list[float] = field(default_factory=list)

    @classmethod
    def fit(
        cls, dataset: Dataset, shape: Sequence[int], config: TrainConfig, name: str = ""
    ) -> "TrainedModel":
        init_rng, _ = _streams(config.seed)
        network = MlpModel.initialize(shape, init_rng)
        inputs, targets = dataset.normalized()
        network, history = train(network, inputs, targets, config)
        return cls(
            network=prune(network, config.prune_threshold),
            stats=dataset.stats,
            config=config,
            name=name,
            loss_history=history,
        )

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def state_std(self) -> np.ndarray:
        return self.stats.state_std

    def derivative(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Estimated state derivative for physical-unit x (8,) and u (5,)."""
        z = self.stats.normalize_inputs(np.concatenate([np.asarray(x, float), np.asarray(u, float)]))
        return self.stats.denormalize_targets(forward(self.network, z))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "network": self.network.to_dict(),
            "normalization": self.stats.to_dict(),
            "train_config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict, history: Optional[list[float]] = None) -> "TrainedModel":
        return cls(
            network=MlpModel.from_dict(data["network"]),
            stats=NormStats.from_dict(data["normalization"]),
            config=TrainConfig.from_dict(data["train_config"]),
            name=data.get("name", ""),
            loss_history=list(history or []),
        )
