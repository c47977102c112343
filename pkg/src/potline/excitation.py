"""Excitation experiments: initial conditions, control signals, datasets.

Each control input is a deterministic proportional term plus a random term:

    u_i = bias + gain * (setpoint - measured) + random

Impulse inputs (feeds and tapping) are clamped at zero and carry no random
term while their deterministic term is zero. Random terms are redrawn at the
start of every hold period and held until the next one.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError
from .models import N_INPUTS, N_STATES, Dataset, TimeSeries
from .sim import SimConstants, check_state, concentrations, rk4_step

Interval = tuple[float, float]

# Runs per series before a divergence is reported.
MAX_ATTEMPTS = 20


@dataclass(frozen=True)
class InitSampler:
    """Uniform intervals for the initial state; x2/x3 are given as concentrations."""

    x1: Interval = (3260.0, 3260.0)
    c_x2: Interval = (0.02, 0.03)
    c_x3: Interval = (0.10, 0.12)
    x4: Interval = (13500.0, 14000.0)
    x5: Interval = (9950.0, 10000.0)
    x6: Interval = (975.0, 975.0)
    x7: Interval = (816.0, 816.0)
    x8: Interval = (580.0, 580.0)
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("x1", "c_x2", "c_x3", "x4", "x5", "x6", "x7", "x8"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"initial interval {name} has lo > hi: [{lo}, {hi}]")
        if self.c_x2[1] + self.c_x3[1] >= 1:
            raise ConfigError("c_x2 + c_x3 must stay below 1")

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class InputChannel:
    """One control input: proportional rule, random interval, hold period in steps."""

    bias: float = 0.0
    gain: float = 0.0
    measured: Optional[str] = None  # "c_x2", "c_x3", "x5" or None for a constant
    setpoint: float = 0.0
    noise: Interval = (0.0, 0.0)
    hold: int = 1
    impulse: bool = False

    def __post_init__(self) -> None:
        if self.measured not in (None, "c_x2", "c_x3", "x5"):
            raise ConfigError(f"unknown measured variable {self.measured!r}")
        if self.hold < 1:
            raise ConfigError(f"hold period must be >= 1 step, got {self.hold}")
        if self.noise[0] > self.noise[1]:
            raise ConfigError(f"random interval has lo > hi: {self.noise}")

    def deterministic(self, measurements: dict[str, float]) -> float:
        if self.measured is None:
            return self.bias
        return self.bias + self.gain * (self.setpoint - measurements[self.measured])


@dataclass(frozen=True)
class ControlPolicy:
    channels: tuple[InputChannel, ...] = field(default_factory=lambda: ControlPolicy.standard().channels)

    def __post_init__(self) -> None:
        if len(self.channels) != N_INPUTS:
            raise ConfigError(f"control policy needs {N_INPUTS} channels, got {len(self.channels)}")

    @staticmethod
    def standard() -> "ControlPolicy":
        return ControlPolicy(
            channels=(
                InputChannel(gain=3e4, measured="c_x2", setpoint=0.023, noise=(-2.0, 2.0), impulse=True),
                InputChannel(bias=14e3, noise=(-7e3, 7e3), hold=30),
                InputChannel(gain=13e3, measured="c_x3", setpoint=0.105, noise=(-0.5, 0.5), impulse=True),
                # 2 * (x5 - 10e3), written as gain * (setpoint - x5)
                InputChannel(gain=-2.0, measured="x5", setpoint=10e3, noise=(-2.0, 2.0), impulse=True),
                InputChannel(bias=0.05, noise=(-0.015, 0.015), hold=30),
            )
        )

    def to_dict(self) -> dict:
        return {"channels": [asdict(c) for c in self.channels]}


class ControlNoise:
    """Held random terms for every channel, drawn from one seeded stream.

    Every channel draws at each of its hold boundaries whether or not the
    draw is used, so the stream depends only on the seed and the step count.
    Steps must be requested in order.
    """

    def __init__(self, policy: ControlPolicy, rng: np.random.Generator) -> None:
        self.policy = policy
        self.rng = rng
        self._held = np.zeros(N_INPUTS)
        self._next_step = 0

    def terms(self, step: int) -> np.ndarray:
        if step < 0:
            raise ValueError(f"step must be >= 0, got {step}")
        if step != self._next_step:
            raise ValueError(f"noise stream expected step {self._next_step}, got {step}")
        for i, ch in enumerate(self.policy.channels):
            if step % ch.hold == 0:
                self._held[i] = self.rng.uniform(ch.noise[0], ch.noise[1])
        self._next_step += 1
        return self._held.copy()


def _measurements(state: np.ndarray) -> dict[str, float]:
    c_x2, c_x3 = concentrations(state)
    return {"c_x2": c_x2, "c_x3": c_x3, "x5": float(state[4])}


def control_signal(
    state: Sequence[float],
    step: int,
    policy: ControlPolicy,
    noise: ControlNoise,
) -> np.ndarray:
    """Control inputs u1..u5 for the current state and step."""
    state = np.asarray(state, dtype=float)
    random = noise.terms(step)
    meas = _measurements(state)

    u = np.empty(N_INPUTS)
    for i, ch in enumerate(policy.channels):
        det = ch.deterministic(meas)
        if ch.impulse:
            det = max(det, 0.0)
            u[i] = 0.0 if det == 0.0 else max(det + random[i], 0.0)
        else:
            u[i] = det + random[i]
    return u


def sample_initial_state(
    sampler: InitSampler, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """Uniform draw per variable; concentrations are converted to masses.

    Closure: total bath mass = x4 / (1 - c_x2 - c_x3), x2 = c_x2 * total,
    x3 = c_x3 * total.
    """
    rng = rng if rng is not None else np.random.default_rng(sampler.seed)
    x1 = rng.uniform(*sampler.x1)
    c_x2 = rng.uniform(*sampler.c_x2)
    c_x3 = rng.uniform(*sampler.c_x3)
    x4 = rng.uniform(*sampler.x4)
    x5 = rng.uniform(*sampler.x5)
    x6 = rng.uniform(*sampler.x6)
    x7 = rng.uniform(*sampler.x7)
    x8 = rng.uniform(*sampler.x8)

    total = x4 / (1.0 - c_x2 - c_x3)
    state = np.array([x1, c_x2 * total, c_x3 * total, x4, x5, x6, x7, x8])
    check_state(state, 0)
    return state


def _run_series(
    sampler: InitSampler,
    policy: ControlPolicy,
    consts: SimConstants,
    steps: int,
    seed: int,
    attempt: int,
) -> TimeSeries:
    rng = np.random.default_rng(seed if attempt == 0 else [seed, attempt])
    x0 = sample_initial_state(sampler, rng)
    noise = ControlNoise(policy, rng)

    states = np.empty((steps + 1, N_STATES))
    inputs = np.empty((steps, N_INPUTS))
    states[0] = x0
    for k in range(steps):
        try:
            inputs[k] = control_signal(states[k], k, policy, noise)
            states[k + 1] = rk4_step(states[k], inputs[k], consts, consts.dt)
        except ArithmeticError as e:
            raise DivergenceError(f"step {k + 1}: {e}", step=k + 1) from e
        check_state(states[k + 1], k + 1)
    return TimeSeries(states=states, inputs=inputs, dt=consts.dt, seed=seed, attempt=attempt)


def simulate_series(
    sampler: InitSampler,
    policy: ControlPolicy,
    consts: SimConstants,
    steps: int,
    seed: int,
    max_attempts: int = MAX_ATTEMPTS,
) -> TimeSeries:
    """Closed-loop excitation run of `steps` RK4 steps from a sampled x(0).

    Attempt 0 draws from `seed`. A run that diverges is redrawn, initial
    state and noise alike, from the stream seeded with [seed, attempt]
    (docs/decisions/0004-divergence-redraw.md). The returned series records
    the attempt it came from; the last DivergenceError propagates once
    `max_attempts` runs have failed.
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if max_attempts < 1:
        raise ValueError(f"max_attempts must be >= 1, got {max_attempts}")
    for attempt in range(max_attempts):
        try:
            return _run_series(sampler, policy, consts, steps, seed, attempt)
        except DivergenceError as e:
            last = e
    raise DivergenceError(
        f"{last} (all {max_attempts} attempts diverged)", step=last.step
    ) from last


def build_dataset(trajectories: Sequence[TimeSeries], metadata: Optional[dict] = None) -> Dataset:
    """Stack X = [x(k), u(k)] and Y = (x(k+1) - x(k)) / dt over all trajectories."""
    xs, ys = [], []
    for ts in trajectories:
        xs.append(np.hstack([ts.states[:-1], ts.inputs]))
        ys.append((ts.states[1:] - ts.states[:-1]) / ts.dt)
    if not xs:
        raise ValueError("no trajectories to build a dataset from")
    return Dataset(inputs=np.vstack(xs), targets=np.vstack(ys), metadata=dict(metadata or {}))


def _simulate_job(job: tuple) -> TimeSeries:
    index, sampler, policy, consts, steps, seed, max_attempts = job
    try:
        return simulate_series(sampler, policy, consts, steps, seed, max_attempts)
    except DivergenceError as e:
        raise DivergenceError(str(e), step=e.step, series=index) from e


def simulate_many(
    n_series: int,
    steps: int,
    sampler: InitSampler,
    policy: ControlPolicy,
    consts: SimConstants,
    jobs: int = 1,
    max_attempts: int = MAX_ATTEMPTS,
) -> list[TimeSeries]:
    """Series i uses seed sampler.seed + i; results are in index order for any `jobs`."""
    work = [
        (i, sampler, policy, consts, steps, sampler.seed + i, max_attempts)
        for i in range(n_series)
    ]
    if jobs > 1 and n_series > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_simulate_job, work))
    return [_simulate_job(w) for w in work]


def generate_training_set(
    n_series: int,
    steps: int,
    sampler: InitSampler,
    policy: ControlPolicy,
    consts: SimConstants,
    jobs: int = 1,
    max_attempts: int = MAX_ATTEMPTS,
) -> Dataset:
    """Regression set from `n_series` runs of `steps` sampled states each.

    `steps` counts rows of the X matrix per series, so every series yields
    steps - 1 pairs.
    """
    if n_series < 1:
        raise ValueError(f"n_series must be >= 1, got {n_series}")
    if steps < 2:
        raise ValueError(f"steps must be >= 2, got {steps}")
    series = simulate_many(
        n_series, steps - 1, sampler, policy, consts, jobs=jobs, max_attempts=max_attempts
    )
    return build_dataset(
        series,
        metadata={
            "n_series": n_series,
            "steps": steps,
            "dt": consts.dt,
            "seeds": [s.seed for s in series],
            "attempts": [s.attempt for s in series],
        },
    )


def generate_test_set(
    p: int,
    steps: int,
    sampler: InitSampler,
    policy: ControlPolicy,
    consts: SimConstants,
    jobs: int = 1,
    max_attempts: int = MAX_ATTEMPTS,
) -> list[TimeSeries]:
    """`p` full trajectories of `steps` RK4 steps (steps + 1 states each)."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return simulate_many(p, steps, sampler, policy, consts, jobs=jobs, max_attempts=max_attempts)
