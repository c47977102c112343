"""Initial-state sampling, control signals and dataset construction."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.getcwd(), "src"))

from potline.errors import ConfigError, DivergenceError
from potline.excitation import (
    MAX_ATTEMPTS,
    ControlNoise,
    ControlPolicy,
    InitSampler,
    InputChannel,
    build_dataset,
    control_signal,
    generate_test_set,
    generate_training_set,
    sample_initial_state,
    simulate_many,
    simulate_series,
)
from potline.models import TimeSeries
from potline.sim import SimConstants, concentrations


def _state(c_x2, c_x3, x5=10e3, x4=13750.0):
    total = x4 / (1.0 - c_x2 - c_x3)
    return np.array([3260.0, c_x2 * total, c_x3 * total, x4, x5, 975.0, 816.0, 580.0])


# ---------- initial states ----------


def test_fixed_intervals_are_always_hit():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = sample_initial_state(InitSampler(), rng)
        assert x[0] == 3260.0 and x[5] == 975.0 and x[6] == 816.0 and x[7] == 580.0


def test_concentration_closure():
    rng = np.random.default_rng(4)
    for _ in range(50):
        x = sample_initial_state(InitSampler(), rng)
        c_x2, c_x3 = concentrations(x)
        assert 0.02 <= c_x2 <= 0.03 + 1e-12
        assert 0.10 <= c_x3 <= 0.12 + 1e-12


def test_uniform_draws_cover_interval():
    rng = np.random.default_rng(5)
    x4 = np.array([sample_initial_state(InitSampler(), rng)[3] for _ in range(1000)])
    assert x4.min() >= 13500 and x4.max() <= 14000
    assert abs(x4.mean() - 13750) < 0.01 * 13750


def test_same_seed_same_state():
    a = sample_initial_state(InitSampler(seed=11))
    b = sample_initial_state(InitSampler(seed=11))
    assert np.array_equal(a, b)


def test_sampler_rejects_bad_intervals():
    with pytest.raises(ConfigError):
        InitSampler(x4=(14000.0, 13000.0))
    with pytest.raises(ConfigError):
        InitSampler(c_x2=(0.5, 0.6), c_x3=(0.4, 0.5))


# ---------- control signals ----------


def test_impulse_inputs_zero_when_deterministic_term_nonpositive():
    policy = ControlPolicy.standard()
    noise = ControlNoise(policy, np.random.default_rng(0))
    u = control_signal(_state(0.03, 0.11, x5=9975.0), 0, policy, noise)
    assert u[0] == 0.0  # alumina above setpoint
    assert u[2] == 0.0  # AlF3 above setpoint
    assert u[3] == 0.0  # metal below setpoint


def test_alumina_feed_around_deterministic_term():
    policy = ControlPolicy.standard()
    noise = ControlNoise(policy, np.random.default_rng(1))
    u = control_signal(_state(0.02, 0.11), 0, policy, noise)
    # 3e4 * (0.023 - 0.02) = 90, random term within +/- 2
    assert 88.0 <= u[0] <= 92.0


def test_line_current_held_for_thirty_steps():
    policy = ControlPolicy.standard()
    noise = ControlNoise(policy, np.random.default_rng(2))
    state = _state(0.025, 0.11)
    u2 = [control_signal(state, k, policy, noise)[1] for k in range(31)]
    assert len(set(u2[:30])) == 1
    assert 7e3 <= u2[0] <= 21e3
    assert u2[30] != u2[29]


def test_anode_cathode_distance_held_for_thirty_steps():
    policy = ControlPolicy.standard()
    noise = ControlNoise(policy, np.random.default_rng(6))
    state = _state(0.025, 0.11)
    u5 = [control_signal(state, k, policy, noise)[4] for k in range(31)]
    assert len(set(u5[:30])) == 1
    assert 0.035 <= u5[0] <= 0.065
    assert u5[30] != u5[29]


def test_held_inputs_change_only_at_multiples_of_thirty():
    ts = simulate_series(InitSampler(), ControlPolicy.standard(), SimConstants(), 95, seed=4)
    for col in (1, 4):
        u = ts.inputs[:, col]
        for start in range(0, 95, 30):
            block = u[start : start + 30]
            assert np.all(block == block[0])
        assert u[29] != u[30] and u[59] != u[60] and u[89] != u[90]


def test_noise_steps_must_be_in_order():
    noise = ControlNoise(ControlPolicy.standard(), np.random.default_rng(0))
    noise.terms(0)
    with pytest.raises(ValueError):
        noise.terms(5)
    with pytest.raises(ValueError):
        noise.terms(-1)


def test_channel_validation():
    with pytest.raises(ConfigError):
        InputChannel(measured="x9")
    with pytest.raises(ConfigError):
        InputChannel(hold=0)
    with pytest.raises(ConfigError):
        ControlPolicy(channels=(InputChannel(),))


# ---------- trajectories and datasets ----------


def test_build_dataset_forward_difference():
    states = np.tile(_state(0.025, 0.11), (2, 1))
    states[0, 0], states[1, 0] = 4.0, 10.0
    ts = TimeSeries(states=states, inputs=np.zeros((1, 5)), dt=30.0)
    ds = build_dataset([ts])
    assert len(ds) == 1
    assert ds.targets[0, 0] == pytest.approx(0.2)
    assert np.array_equal(ds.inputs[0, :8], states[0])


def test_dataset_reconstructs_the_trajectory():
    ts = simulate_series(InitSampler(), ControlPolicy.standard(), SimConstants(), 50, seed=3)
    ds = build_dataset([ts])
    assert len(ds) == 50
    rebuilt = ds.inputs[:, :8] + ds.targets * ts.dt
    assert np.allclose(rebuilt, ts.states[1:], rtol=1e-13, atol=0.0)


def test_normalized_training_set_is_zero_mean_unit_std():
    ds = generate_training_set(2, 200, InitSampler(), ControlPolicy.standard(), SimConstants())
    for raw, norm, mean, std in (
        (ds.inputs, ds.normalized()[0], ds.stats.input_mean, ds.stats.input_std),
        (ds.targets, ds.normalized()[1], ds.stats.target_mean, ds.stats.target_std),
    ):
        live = std > 0
        # rounding in x - mean grows with |mean| / std
        tol = 1e-10 * np.maximum(1.0, np.abs(mean[live]) / std[live])
        assert np.all(np.abs(norm[:, live].mean(axis=0)) < tol)
        assert np.allclose(norm[:, live].std(axis=0), 1.0, rtol=1e-9)
        assert np.all(norm[:, ~live] == 0.0)
        assert raw.shape == norm.shape


def test_training_set_minimal_and_pair_count():
    consts = SimConstants()
    one = generate_training_set(1, 2, InitSampler(), ControlPolicy.standard(), consts)
    assert len(one) == 1
    ts = simulate_series(InitSampler(), ControlPolicy.standard(), consts, 1, seed=0)
    assert np.array_equal(one.inputs[0, :8], ts.states[0])
    assert np.allclose(one.targets[0], (ts.states[1] - ts.states[0]) / consts.dt)

    many = generate_training_set(3, 10, InitSampler(), ControlPolicy.standard(), consts)
    assert len(many) == 3 * 9
    assert many.metadata["seeds"] == [0, 1, 2]


def test_series_determinism_and_seed_separation():
    args = (InitSampler(), ControlPolicy.standard(), SimConstants(), 20)
    a = simulate_series(*args, seed=7)
    b = simulate_series(*args, seed=7)
    c = simulate_series(*args, seed=8)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.inputs, b.inputs)
    assert not np.array_equal(a.states, c.states)


def test_thousand_step_runs_stay_physical():
    consts = SimConstants()
    for seed in range(10):
        ts = simulate_series(InitSampler(), ControlPolicy.standard(), consts, 1000, seed=seed)
        assert ts.steps == 1000 and ts.seed == seed
        assert 0 <= ts.attempt < MAX_ATTEMPTS
        assert np.all(np.isfinite(ts.states))
        assert np.all(ts.states[:, :5] > 0)
        assert np.all(ts.inputs[:, [0, 2, 3]] >= 0)
        assert np.all(ts.inputs[:, [1, 4]] > 0)


# Half of these x5 draws are negative, so many first runs fail at step 0.
COIN_FLIP_X5 = InitSampler(x5=(-10_000.0, 10_000.0))


def test_diverged_runs_are_redrawn_deterministically():
    args = (COIN_FLIP_X5, ControlPolicy.standard(), SimConstants(), 3)
    series = [simulate_series(*args, seed=s) for s in range(16)]
    assert any(ts.attempt > 0 for ts in series)
    for s, ts in enumerate(series):
        assert ts.seed == s
        assert np.all(ts.states[:, :5] > 0)

    redrawn = next(ts for ts in series if ts.attempt > 0)
    again = simulate_series(*args, seed=redrawn.seed)
    assert again.attempt == redrawn.attempt
    assert np.array_equal(again.states, redrawn.states)
    assert np.array_equal(again.inputs, redrawn.inputs)


def test_first_attempt_uses_the_seed_alone():
    args = (InitSampler(), ControlPolicy.standard(), SimConstants(), 20)
    ts = simulate_series(*args, seed=7)
    once = simulate_series(*args, seed=7, max_attempts=1)
    assert ts.attempt == 0
    assert np.array_equal(ts.states, once.states)
    assert np.array_equal(ts.states[0], sample_initial_state(InitSampler(), np.random.default_rng(7)))


def test_divergence_reported_after_all_attempts():
    always_bad = InitSampler(x5=(-1.0, -1.0))
    with pytest.raises(DivergenceError, match="all 3 attempts"):
        simulate_series(always_bad, ControlPolicy.standard(), SimConstants(), 5, seed=0, max_attempts=3)
    with pytest.raises(DivergenceError) as info:
        simulate_many(2, 5, always_bad, ControlPolicy.standard(), SimConstants(), max_attempts=2)
    assert info.value.series == 0
    with pytest.raises(ValueError):
        simulate_series(InitSampler(), ControlPolicy.standard(), SimConstants(), 5, seed=0, max_attempts=0)


def test_training_metadata_records_attempts():
    ds = generate_training_set(4, 4, COIN_FLIP_X5, ControlPolicy.standard(), SimConstants())
    assert ds.metadata["seeds"] == [0, 1, 2, 3]
    assert len(ds.metadata["attempts"]) == 4


def test_test_set_lengths():
    series = generate_test_set(2, 5, InitSampler(seed=10_000), ControlPolicy.standard(), SimConstants())
    assert [s.states.shape for s in series] == [(6, 8), (6, 8)]
    assert [s.seed for s in series] == [10_000, 10_001]
    assert all(np.all(np.isfinite(s.states)) for s in series)


def test_parallel_simulation_matches_serial():
    args = (3, 5, InitSampler(), ControlPolicy.standard(), SimConstants())
    serial = simulate_many(*args, jobs=1)
    parallel = simulate_many(*args, jobs=2)
    for a, b in zip(serial, parallel):
        assert np.array_equal(a.states, b.states)


def test_invalid_counts():
    with pytest.raises(ValueError):
        generate_training_set(0, 10, InitSampler(), ControlPolicy.standard(), SimConstants())
    with pytest.raises(ValueError):
        generate_training_set(1, 1, InitSampler(), ControlPolicy.standard(), SimConstants())
    with pytest.raises(ValueError):
        generate_test_set(0, 10, InitSampler(), ControlPolicy.standard(), SimConstants())
