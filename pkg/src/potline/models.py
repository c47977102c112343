"""Shared data containers: trajectories, regression datasets, normalization."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

STATE_NAMES = ("x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8")
INPUT_NAMES = ("u1", "u2", "u3", "u4", "u5")
FEATURE_NAMES = STATE_NAMES + INPUT_NAMES
OUTPUT_NAMES = ("f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8")

N_STATES = len(STATE_NAMES)
N_INPUTS = len(INPUT_NAMES)
N_FEATURES = len(FEATURE_NAMES)

# Mass states x1..x5 must stay strictly positive.
MASS_SLICE = slice(0, 5)


@dataclass
class TimeSeries:
    """One simulated trajectory.

    `states` has N+1 rows (x(0)..x(N)); `inputs` has N rows, u(k) being held
    over the step from x(k) to x(k+1).
    """

    states: np.ndarray
    inputs: np.ndarray
    dt: float
    seed: Optional[int] = None
    # 0 unless earlier runs from this seed diverged and were redrawn
    attempt: int = 0

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=float).reshape(-1, N_STATES)
        self.inputs = np.asarray(self.inputs, dtype=float).reshape(-1, N_INPUTS)
        if len(self.states) != len(self.inputs) + 1:
            raise ValueError(
                f"expected {len(self.inputs) + 1} states for {len(self.inputs)} inputs, "
                f"got {len(self.states)}"
            )

    @property
    def steps(self) -> int:
        return len(self.inputs)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.states)) * self.dt

    def table(self) -> np.ndarray:
        """t, x1..x8, u1..u5 rows; the final row's inputs are NaN."""
        padded = np.vstack([self.inputs, np.full((1, N_INPUTS), np.nan)])
        return np.column_stack([self.times, self.states, padded])

    @classmethod
    def from_table(
        cls, table: np.ndarray, dt: float, seed: Optional[int] = None, attempt: int = 0
    ) -> "TimeSeries":
        table = np.atleast_2d(table)
        return cls(
            states=table[:, 1 : 1 + N_STATES],
            inputs=table[:-1, 1 + N_STATES :],
            dt=dt,
            seed=seed,
            attempt=attempt,
        )


@dataclass
class NormStats:
    """Per-column z-score statistics of the training data (population std)."""

    input_mean: np.ndarray
    input_std: np.ndarray
    target_mean: np.ndarray
    target_std: np.ndarray

    @classmethod
    def fit(cls, inputs: np.ndarray, targets: np.ndarray) -> "NormStats":
        return cls(
            input_mean=inputs.mean(axis=0),
            input_std=inputs.std(axis=0),
            target_mean=targets.mean(axis=0),
            target_std=targets.std(axis=0),
        )

    @property
    def state_std(self) -> np.ndarray:
        """std(x_i) of the state columns, as used by AN-RFMSE."""
        return self.input_std[:N_STATES]

    # Constant columns keep unit scale rather than dividing by zero.
    def _scale(self, std: np.ndarray) -> np.ndarray:
        return np.where(std > 0, std, 1.0)

    def normalize_inputs(self, inputs: np.ndarray) -> np.ndarray:
        return (inputs - self.input_mean) / self._scale(self.input_std)

    def normalize_targets(self, targets: np.ndarray) -> np.ndarray:
        return (targets - self.target_mean) / self._scale(self.target_std)

    def denormalize_targets(self, targets: np.ndarray) -> np.ndarray:
        return targets * self._scale(self.target_std) + self.target_mean

    def to_dict(self) -> dict:
        return {
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "target_mean": self.target_mean.tolist(),
            "target_std": self.target_std.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls(**{k: np.asarray(data[k], dtype=float) for k in
                      ("input_mean", "input_std", "target_mean", "target_std")})


@dataclass
class Dataset:
    """Regression pairs: rows [x1..x8, u1..u5] -> forward-difference derivatives."""

    inputs: np.ndarray
    targets: np.ndarray
    stats: Optional[NormStats] = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if len(self.inputs) != len(self.targets):
            raise ValueError(
                f"{len(self.inputs)} input rows but {len(self.targets)} target rows"
            )
        if self.stats is None:
            self.stats = NormStats.fit(self.inputs, self.targets)

    def __len__(self) -> int:
        return len(self.inputs)

    def normalized(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            self.stats.normalize_inputs(self.inputs),
            self.stats.normalize_targets(self.targets),
        )


def provenance(config_hash: str, seed: int) -> dict[str, Any]:
    """Stamp embedded in every artifact."""
    from . import __version__

    return {"config_hash": config_hash, "seed": seed, "version": __version__}
