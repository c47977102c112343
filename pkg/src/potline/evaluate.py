"""Rolling forecasts and the AN-RFMSE error measure.

A rolling forecast starts from the recorded x(0), feeds the model its own
estimates and the recorded inputs, and integrates with forward Euler:

    x_hat(k + 1) = x_hat(k) + f_hat(x_hat(k), u(k)) * dt

The test trajectories come from RK4, so even the exact derivative leaves an
integration-scheme floor in the error (docs/decisions/0003-euler-forecast-floor.md).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from .errors import ZeroStdError
from .models import N_STATES, TimeSeries
from .sim import SimConstants, rhs

# Cap on one step's normalized squared error, and the score of a forecast with no finite step.
ERROR_CAP = 1e12


class DerivativeModel(Protocol):
    name: str

    @property
    def state_std(self) -> np.ndarray: ...

    def derivative(self, x: np.ndarray, u: np.ndarray) -> np.ndarray: ...


@dataclass
class SimulatorOracle:
    """The simulator's own right-hand side posing as a model."""

    consts: SimConstants
    state_std: np.ndarray
    name: str = "oracle"

    def derivative(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return rhs(x, u, self.consts)


@dataclass
class Forecast:
    """Estimates x_hat(0..n); rows after a divergence are NaN."""

    states: np.ndarray
    diverged_at: Optional[int] = None

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None


def rolling_forecast(
    model: DerivativeModel,
    x0: Sequence[float],
    inputs: np.ndarray,
    n: int,
    dt: float,
) -> Forecast:
    inputs = np.asarray(inputs, dtype=float)
    if n < 0 or n > len(inputs):
        raise ValueError(f"horizon {n} outside 0..{len(inputs)}")
    states = np.full((n + 1, N_STATES), np.nan)
    states[0] = np.asarray(x0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            try:
                nxt = states[k] + np.asarray(model.derivative(states[k], inputs[k])) * dt
            except ArithmeticError:
                return Forecast(states=states, diverged_at=k + 1)
            if not np.all(np.isfinite(nxt)):
                return Forecast(states=states, diverged_at=k + 1)
            states[k + 1] = nxt
    return Forecast(states=states)


def an_rfmse(
    forecast: np.ndarray, truth: np.ndarray, train_std: Sequence[float], n: int
) -> float:
    """Mean over states of the std-normalized squared error averaged over steps 1..n.

    A diverged forecast is scored over its finite prefix: the steps before
    its first non-finite row. One that diverges at step 1 scores ERROR_CAP.
    Finite per-step errors are capped at ERROR_CAP.
    """
    std = np.asarray(train_std, dtype=float)
    if np.any(std == 0):
        raise ZeroStdError(f"zero training std for state(s) {np.flatnonzero(std == 0) + 1}")
    if n < 1:
        raise ValueError(f"horizon must be >= 1, got {n}")
    forecast = np.asarray(forecast, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if len(forecast) < n + 1 or len(truth) < n + 1:
        raise ValueError(f"need {n + 1} rows, got forecast {len(forecast)} and truth {len(truth)}")
    finite = np.all(np.isfinite(forecast[1 : n + 1]), axis=1)
    prefix = n if finite.all() else int(np.argmin(finite))
    if prefix == 0:
        return ERROR_CAP
    with np.errstate(over="ignore"):
        err = ((forecast[1 : prefix + 1] - truth[1 : prefix + 1]) / std) ** 2
    err = np.minimum(err, ERROR_CAP)
    return float(err.mean(axis=0).mean())


@dataclass
class HorizonReport:
    horizon: int
    matrix: np.ndarray  # models x series
    diverged: np.ndarray  # same shape, bool

    @property
    def vector(self) -> np.ndarray:
        return self.matrix.mean(axis=1)


@dataclass
class ForecastReport:
    model_names: list[str]
    seeds: list[Optional[int]]
    n_series: int
    horizons: dict[int, HorizonReport] = field(default_factory=dict)

    def groups(self) -> list[str]:
        return list(dict.fromkeys(self.model_names))

    def group_summary(self, horizon: int) -> dict[str, dict]:
        rep = self.horizons[horizon]
        out = {}
        names = np.asarray(self.model_names)
        for group in self.groups():
            rows = names == group
            values = rep.vector[rows]
            out[group] = {
                "models": int(rows.sum()),
                "median": float(np.median(values)),
                "min": float(values.min()),
                "max": float(values.max()),
                "diverged": int(rep.diverged[rows].sum()),
            }
        return out

    def to_dict(self) -> dict:
        return {
            "models": self.model_names,
            "seeds": self.seeds,
            "n_series": self.n_series,
            "horizons": {
                str(h): {
                    "vector": rep.vector.tolist(),
                    "groups": self.group_summary(h),
                }
                for h, rep in sorted(self.horizons.items())
            },
        }


def _evaluate_model(job: tuple) -> tuple[np.ndarray, np.ndarray]:
    model, test_set, horizons = job
    longest = max(horizons)
    scores = np.empty((len(horizons), len(test_set)))
    diverged = np.zeros((len(horizons), len(test_set)), dtype=bool)
    for s, ts in enumerate(test_set):
        fc = rolling_forecast(model, ts.states[0], ts.inputs, longest, ts.dt)
        for h, n in enumerate(horizons):
            scores[h, s] = an_rfmse(fc.states, ts.states, model.state_std, n)
            diverged[h, s] = fc.diverged_at is not None and fc.diverged_at <= n
    return scores, diverged


def evaluate_population(
    models: Sequence[DerivativeModel],
    test_set: Sequence[TimeSeries],
    horizons: Sequence[int],
    jobs: int = 1,
) -> ForecastReport:
    """AN-RFMSE of every (model, series) pair for each horizon.

    Each model's forecast is run once to the longest horizon; shorter
    horizons score its prefix.
    """
    if not models or not test_set or not horizons:
        raise ValueError("need at least one model, one test series and one horizon")
    horizons = sorted(set(int(h) for h in horizons))
    shortest = min(ts.steps for ts in test_set)
    if horizons[-1] > shortest:
        raise ValueError(f"horizon {horizons[-1]} exceeds test series length {shortest}")

    work = [(m, list(test_set), horizons) for m in models]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_evaluate_model, work))
    else:
        results = [_evaluate_model(w) for w in work]

    report = ForecastReport(
        model_names=[m.name for m in models],
        seeds=[getattr(m, "seed", None) for m in models],
        n_series=len(test_set),
    )
    for h, n in enumerate(horizons):
        report.horizons[n] = HorizonReport(
            horizon=n,
            matrix=np.stack([r[0][h] for r in results]),
            diverged=np.stack([r[1][h] for r in results]),
        )
    return report


@dataclass
class ForecastBands:
    times: np.ndarray
    truth: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    diverged: int


def forecast_bands(
    models: Sequence[DerivativeModel], series: TimeSeries, n: int
) -> ForecastBands:
    """Per-step mean and std of a model group's forecasts; diverged rows are skipped."""
    runs = [rolling_forecast(m, series.states[0], series.inputs, n, series.dt) for m in models]
    stack = np.stack([r.states for r in runs])
    finite = np.isfinite(stack)
    count = finite.sum(axis=0)
    total = np.where(finite, stack, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = total / count
        var = np.where(finite, (stack - mean) ** 2, 0.0).sum(axis=0) / count
    return ForecastBands(
        times=series.times[: n + 1],
        truth=series.states[: n + 1],
        mean=mean,
        std=np.sqrt(var),
        diverged=sum(r.diverged for r in runs),
    )
