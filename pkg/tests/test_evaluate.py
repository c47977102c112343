"""Rolling forecasts, AN-RFMSE and population reports."""

import os
import sys
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

sys.path.insert(0, os.path.join(os.getcwd(), "src"))

from potline.errors import ZeroStdError
from potline.evaluate import (
    ERROR_CAP,
    SimulatorOracle,
    an_rfmse,
    evaluate_population,
    forecast_bands,
    rolling_forecast,
)
from potline import plots
from potline.excitation import ControlPolicy, InitSampler, simulate_series
from potline.models import TimeSeries
from potline.sim import SimConstants, rhs

STD = np.ones(8)


@dataclass
class ConstantModel:
    """Returns the same derivative everywhere."""

    value: float = 0.0
    name: str = "const"
    seed: int = 0

    @property
    def state_std(self):
        return STD

    def derivative(self, x, u):
        return np.full(8, self.value)


def _flat_series(steps=10, level=5.0):
    return TimeSeries(states=np.full((steps + 1, 8), level), inputs=np.zeros((steps, 5)), dt=30.0)


# ---------- rolling forecast ----------


def test_zero_horizon_is_just_x0():
    fc = rolling_forecast(ConstantModel(1.0), np.arange(8.0), np.zeros((5, 5)), 0, 30.0)
    assert fc.states.shape == (1, 8)
    assert not fc.diverged


def test_zero_model_stays_at_x0():
    x0 = np.arange(1.0, 9.0)
    fc = rolling_forecast(ConstantModel(0.0), x0, np.zeros((6, 5)), 6, 30.0)
    assert np.array_equal(fc.states, np.tile(x0, (7, 1)))


def test_oracle_forecast_is_euler_of_the_simulator():
    consts = SimConstants()
    ts = simulate_series(InitSampler(), ControlPolicy.standard(), consts, 20, seed=0)
    oracle = SimulatorOracle(consts=consts, state_std=STD)
    fc = rolling_forecast(oracle, ts.states[0], ts.inputs, 20, consts.dt)
    x = ts.states[0].copy()
    for k in range(20):
        x = x + np.asarray(rhs(x, ts.inputs[k], consts)) * consts.dt
        assert np.array_equal(fc.states[k + 1], x)


def test_divergence_marks_step_and_fills_nan():
    fc = rolling_forecast(ConstantModel(np.inf), np.zeros(8), np.zeros((5, 5)), 5, 30.0)
    assert fc.diverged_at == 1
    assert np.all(np.isnan(fc.states[1:]))
    assert np.array_equal(fc.states[0], np.zeros(8))


def test_horizon_out_of_range():
    with pytest.raises(ValueError):
        rolling_forecast(ConstantModel(), np.zeros(8), np.zeros((3, 5)), 4, 30.0)


# ---------- AN-RFMSE ----------


def test_perfect_forecast_scores_zero():
    truth = np.random.default_rng(0).normal(size=(11, 8))
    assert an_rfmse(truth, truth, STD, 10) == 0.0


def test_unit_error_on_one_state_one_step():
    truth = np.zeros((2, 8))
    fc = truth.copy()
    fc[1, 3] = 2.0
    std = np.full(8, 2.0)
    assert an_rfmse(fc, truth, std, 1) == pytest.approx(1 / 8, abs=1e-12)
    fc[1, :] = 2.0
    assert an_rfmse(fc, truth, std, 1) == pytest.approx(1.0, abs=1e-12)


def test_constant_offset_closed_form():
    delta, n = 0.7, 25
    std = np.linspace(1.0, 8.0, 8)
    truth = np.zeros((n + 1, 8))
    fc = truth.copy()
    fc[1:, 5] = delta * std[5]
    assert an_rfmse(fc, truth, std, n) == pytest.approx(delta**2 / 8)


@settings(max_examples=40, deadline=None)
@given(
    scale=st.floats(min_value=1e-3, max_value=1e3),
    state=st.integers(min_value=0, max_value=7),
)
def test_rescaling_error_and_std_together_is_invariant(scale, state):
    rng = np.random.default_rng(1)
    truth = rng.normal(size=(6, 8))
    fc = truth + rng.normal(size=(6, 8))
    std = rng.uniform(0.5, 2.0, size=8)
    base = an_rfmse(fc, truth, std, 5)

    fc2 = fc.copy()
    fc2[:, state] = truth[:, state] + scale * (fc[:, state] - truth[:, state])
    std2 = std.copy()
    std2[state] *= scale
    assert an_rfmse(fc2, truth, std2, 5) == pytest.approx(base, rel=1e-9)


def test_diverged_forecast_scored_over_finite_prefix():
    truth = np.zeros((5, 8))
    fc = truth.copy()
    fc[1:, 0] = [1.0, 3.0, np.nan, np.nan]
    # steps 1 and 2 only: ((1 + 9) / 2) / 8
    assert an_rfmse(fc, truth, STD, 4) == pytest.approx(5 / 8)
    assert an_rfmse(fc, truth, STD, 4) == an_rfmse(fc, truth, STD, 2)


def test_no_finite_step_scores_the_cap():
    truth = np.zeros((3, 8))
    fc = np.full((3, 8), np.nan)
    fc[0] = 0.0
    assert an_rfmse(fc, truth, STD, 2) == ERROR_CAP


def test_huge_finite_error_is_capped_per_step():
    truth = np.zeros((2, 8))
    fc = np.full((2, 8), 1e200)
    assert an_rfmse(fc, truth, STD, 1) == ERROR_CAP


def test_zero_std_rejected():
    std = STD.copy()
    std[2] = 0.0
    with pytest.raises(ZeroStdError):
        an_rfmse(np.zeros((2, 8)), np.zeros((2, 8)), std, 1)
    with pytest.raises(ValueError):
        an_rfmse(np.zeros((2, 8)), np.zeros((2, 8)), STD, 0)


# ---------- population reports ----------


def test_perfect_model_gives_all_zero_report():
    report = evaluate_population([ConstantModel()], [_flat_series(), _flat_series(level=2.0)], [5, 10])
    for rep in report.horizons.values():
        assert rep.matrix.shape == (1, 2)
        assert np.all(rep.matrix == 0) and not rep.diverged.any()


def test_report_matrix_and_row_means():
    series = [_flat_series(), _flat_series(level=1.0)]
    models = [ConstantModel(0.0, name="a"), ConstantModel(0.01, name="b", seed=7)]
    report = evaluate_population(models, series, [4])
    rep = report.horizons[4]
    assert rep.matrix.shape == (2, 2)
    assert np.allclose(rep.vector, rep.matrix.mean(axis=1))
    # drift 0.3 per step: mean over k=1..4 of (0.3k)^2
    expect = np.mean([(0.3 * k) ** 2 for k in range(1, 5)])
    assert rep.matrix[1] == pytest.approx([expect, expect])
    assert report.seeds == [0, 7]


def test_group_summary_matches_sorted_values():
    models = [ConstantModel(v, name="g") for v in (0.0, 0.02, 0.01)] + [ConstantModel(0.05, name="h")]
    report = evaluate_population(models, [_flat_series()], [10])
    summary = report.group_summary(10)
    values = sorted(report.horizons[10].vector[:3])
    assert summary["g"]["median"] == pytest.approx(values[1])
    assert summary["g"]["min"] == values[0] and summary["g"]["max"] == values[-1]
    assert summary["g"]["models"] == 3 and summary["h"]["models"] == 1
    assert report.groups() == ["g", "h"]
    assert set(report.to_dict()["horizons"]) == {"10"}


def test_divergence_is_counted_per_horizon():
    report = evaluate_population([ConstantModel(np.inf)], [_flat_series()], [3, 10])
    assert report.horizons[3].diverged.all()
    assert report.group_summary(10)["const"]["diverged"] == 1


def test_horizon_longer_than_series_rejected():
    with pytest.raises(ValueError):
        evaluate_population([ConstantModel()], [_flat_series(steps=5)], [6])


def test_bands_of_identical_models():
    models = [ConstantModel(0.01), ConstantModel(0.01)]
    bands = forecast_bands(models, _flat_series(), 10)
    assert bands.mean.shape == (11, 8)
    assert np.allclose(bands.std, 0.0)
    assert bands.mean[10, 0] == pytest.approx(5.0 + 10 * 0.01 * 30.0)
    assert bands.diverged == 0


def test_bar_script_drops_log_axis_for_zero_scores():
    prov = {"config_hash": "abc", "seed": 0}
    log = plots.bar_gp("bars_h5.dat", 5, prov)
    linear = plots.bar_gp("bars_h5.dat", 5, prov, logscale=False)
    assert log.startswith("# config_hash=abc seed=0\n") and "set logscale y" in log
    assert linear.startswith("# config_hash=abc") and "set logscale y" not in linear
    assert plots.band_gp("bands_g.dat", "g", prov).startswith("# config_hash=abc")
