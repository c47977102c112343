"""Aluminium electrolysis cell: nonlinear state-space model and RK4 integrator.

States x1..x8 and inputs u1..u5 are plain float arrays indexed in the order
of `models.STATE_NAMES` / `models.INPUT_NAMES`:

    x1 side-ledge mass [kg]      u1 Al2O3 feed [kg]
    x2 Al2O3 mass [kg]           u2 line current (raw value, nominal 14e3)
    x3 AlF3 mass [kg]            u3 AlF3 feed [kg]
    x4 Na3AlF6 mass [kg]         u4 metal tapping [kg]
    x5 metal mass [kg]           u5 anode-cathode distance [cm]
    x6 bath temperature [°C]
    x7 side-ledge temperature [°C]
    x8 wall temperature [°C]

u2 is plugged in as the raw number from the control table (14e3), not
converted from kA; the magnitudes of k3 and k6 assume that scale
(docs/decisions/0002-line-current-scale.md).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DivergenceError, NonFiniteError
from .models import MASS_SLICE, N_STATES, TimeSeries


@dataclass(frozen=True)
class SimConstants:
    k0: float = 2e-5
    k1: float = 7.5e-4
    k2: float = 0.18
    k3: float = 1.7e-7
    k4: float = 0.036
    k5: float = 0.03
    k6: float = 4.43e-8
    k7: float = 338.0
    k8: float = 1.41
    k9: float = 17.92
    k10: float = 0.00083
    k11: float = 0.2
    k12: float = 237.5
    k13: float = 0.99
    k14: float = 0.0077
    k15: float = 0.2
    k16: float = 35.0  # ambient temperature [°C]
    k17: float = 5.8e-7
    k18: float = 0.04
    alpha: float = 5.66e-4
    beta: float = 7.58e-4
    crit_pr_x2: float = 2.0  # wt% alumina at anode effect
    dt: float = 30.0  # seconds

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"simulator constant {f.name} must be positive, got {value!r}")

    def with_overrides(self, overrides: Mapping[str, float]) -> "SimConstants":
        known = {f.name for f in fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigError(f"unknown simulator constant(s): {', '.join(unknown)}")
        return replace(self, **{k: float(v) for k, v in overrides.items()})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "SimConstants":
        return cls().with_overrides(data)


@dataclass(frozen=True)
class DerivedQuantities:
    c_x2: float
    c_x3: float
    pr_x2: float
    pr_x3: float
    g1: float  # liquidus temperature [°C]
    g2: float  # electrical conductivity
    g3: float  # bubble coverage (fraction)
    g4: float  # bubble thickness [cm]
    g5: float  # bubble voltage drop


def concentrations(state: Sequence[float]) -> tuple[float, float]:
    """Mass fractions c_x2, c_x3 of Al2O3 and AlF3 in the bath."""
    x2, x3, x4 = float(state[1]), float(state[2]), float(state[3])
    bath = x2 + x3 + x4
    if bath == 0:
        raise ZeroDivisionError("bath mass x2 + x3 + x4 is zero")
    return x2 / bath, x3 / bath


def derived_quantities(
    state: Sequence[float], inputs: Sequence[float], consts: SimConstants
) -> DerivedQuantities:
    x6 = float(state[5])
    u2 = float(inputs[1])

    c_x2, c_x3 = concentrations(state)
    pr_x2 = 100.0 * c_x2
    pr_x3 = 100.0 * c_x3

    try:
        g1 = (
            991.2
            + 1.12 * pr_x3
            - 0.13 * math.pow(pr_x3, 2.2)
            + 0.061 * math.pow(pr_x3, 1.5)
            - 7.93 * pr_x2 / (1 + 0.0936 * pr_x3 - 0.0017 * pr_x3**2 - 0.0023 * pr_x3 * pr_x2)
        )
    except ValueError as e:
        raise NonFiniteError(f"liquidus temperature undefined for pr_x3={pr_x3}") from e

    g2 = math.exp(2.496 - 2068.4 / (273 + x6) - 2.07 * c_x2)

    excess = pr_x2 - consts.crit_pr_x2
    g3 = (
        0.531
        + 6.958e-7 * u2
        - 2.51e-12 * u2**2
        + 3.06e-18 * u2**3
        + (0.431 - 0.1437 * excess) / (1 + 7.353 * excess)
    )
    g4 = (0.5517 + 3.8168e-6 * u2) / (1 + 8.271e-6 * u2)

    if g2 == 0:
        raise ZeroDivisionError("electrical conductivity g2 is zero")
    if g3 == 1:
        raise ZeroDivisionError("bubble coverage g3 is exactly 1")
    g5 = 3.8168e-6 * g3 * g4 * u2 / (g2 * (1 - g3))

    return DerivedQuantities(c_x2, c_x3, pr_x2, pr_x3, g1, g2, g3, g4, g5)


def rhs(state: Sequence[float], inputs: Sequence[float], consts: SimConstants) -> np.ndarray:
    """Time derivative of the eight states."""
    x1, x2, x3, x4, x5, x6, x7, x8 = (float(v) for v in state)
    u1, u2, u3, u4, u5 = (float(v) for v in inputs)
    k = consts

    if x1 == 0:
        raise ZeroDivisionError("side-ledge mass x1 is zero")
    d = derived_quantities(state, inputs, consts)
    g1, g2, g5 = d.g1, d.g2, d.g5

    ledge = k.k0 * x1  # side-ledge thickness
    # Freezing/melting exchange between side ledge and bath; cancels in x1' + x4'.
    exchange = k.k1 * (g1 - x7) / (x1 * k.k0) - k.k2 * (x6 - g1)

    dx1 = exchange
    dx2 = u1 - k.k3 * u2
    dx3 = u3 - k.k4 * u1
    dx4 = -exchange + k.k5 * u1
    dx5 = k.k6 * u2 - u4
    dx6 = (k.alpha / (x2 + x3 + x4)) * (
        u2 * (g5 + u2 * u5 / (2620 * g2))
        - k.k9 * (x6 - x7) / (k.k10 + k.k11 * ledge)
        - (k.k7 * (x6 - g1) ** 2 - k.k8 * (x6 - g1) * (g1 - x7) / ledge)
    )
    dx7 = (k.beta / x1) * (
        -(k.k12 * (x6 - g1) * (g1 - x7) - k.k13 * (g1 - x7) ** 2 / ledge)
        + k.k9 * (g1 - x7) / (k.k15 * ledge)
        - (x7 - x8) / (k.k14 + k.k15 * ledge)
    )
    dx8 = k.k17 * k.k9 * (
        (x7 - x8) / (k.k14 + k.k15 * ledge) - (x8 - k.k16) / (k.k14 + k.k18)
    )

    out = np.array([dx1, dx2, dx3, dx4, dx5, dx6, dx7, dx8])
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"non-finite derivative {out.tolist()}")
    return out


def rk4(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of x' = f(x)."""
    x = np.asarray(x, dtype=float)
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(
    state: Sequence[float], inputs: Sequence[float], consts: SimConstants, dt: float
) -> np.ndarray:
    """Advance one step with the inputs held constant (zero-order hold)."""
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    state = np.asarray(state, dtype=float)
    if dt == 0:
        return state.copy()
    u = np.asarray(inputs, dtype=float)
    return rk4(lambda x: rhs(x, u, consts), state, dt)


def check_state(state: np.ndarray, step: int) -> None:
    """Raise DivergenceError unless the state is finite with positive masses."""
    if not np.all(np.isfinite(state)):
        raise DivergenceError(f"non-finite state at step {step}", step=step)
    masses = state[MASS_SLICE]
    if np.any(masses <= 0):
        bad = int(np.argmax(masses <= 0)) + 1
        raise DivergenceError(f"mass x{bad} <= 0 at step {step}", step=step)


def simulate(
    x0: Sequence[float], inputs: Sequence[Sequence[float]], consts: SimConstants
) -> TimeSeries:
    """Integrate an open-loop input sequence from x0 with step consts.dt."""
    u = np.asarray(inputs, dtype=float).reshape(-1, 5)
    states = np.empty((len(u) + 1, N_STATES))
    states[0] = np.asarray(x0, dtype=float)
    check_state(states[0], 0)
    for k in range(len(u)):
        try:
            states[k + 1] = rk4_step(states[k], u[k], consts, consts.dt)
        except (NonFiniteError, ZeroDivisionError, OverflowError) as e:
            raise DivergenceError(f"step {k + 1}: {e}", step=k + 1) from e
        check_state(states[k + 1], k + 1)
    return TimeSeries(states=states, inputs=u, dt=consts.dt)
