import math
import struct

import numpy as np
import pytest

from bwe_bench.errors import PolicyError, WeightsError
from bwe_bench.features import OBS_DIM, SLOTS, MIStats, Observation, assemble
from bwe_bench.nn import Dense, Mlp, init_mlp
from bwe_bench.policy import (
    MAX_BPS,
    MIN_BPS,
    ConstantEstimator,
    HeuristicEstimator,
    HeuristicState,
    ModelWeights,
    NeuralEstimator,
    NoisyEstimator,
    OracleEstimator,
    from_bps,
    heuristic_estimate,
    load_weights,
    mlp_forward,
    normalize_actions,
    parse_policy_spec,
    save_weights,
    to_bps,
)
from bwe_bench.traces import fixed_trace


def random_weights(seed=0, hidden=128):
    rng = np.random.default_rng(seed)
    net = init_mlp([OBS_DIM, hidden, hidden, 2], ["tanh", "tanh", "identity"], rng, np.float32)
    for layer in net.layers:
        layer.b[:] = rng.standard_normal(layer.b.shape)
    mean = rng.standard_normal(OBS_DIM).astype(np.float32)
    std = rng.uniform(0.5, 2.0, OBS_DIM).astype(np.float32)
    return ModelWeights(mean, std, net)


def zero_weights():
    net = Mlp(
        [
            Dense(np.zeros((OBS_DIM, 128)), np.zeros(128)),
            Dense(np.zeros((128, 128)), np.zeros(128)),
            Dense(np.zeros((128, 2)), np.zeros(2), "identity"),
        ]
    )
    return ModelWeights(np.zeros(OBS_DIM), np.ones(OBS_DIM), net)


def obs_with(mi):
    return assemble([mi] + [MIStats() for _ in range(SLOTS - 1)], [MIStats() for _ in range(SLOTS)])


# ------------------------------ action transform ----------------------------
def test_transform_endpoints():
    assert to_bps(-1.0) == pytest.approx(10_000.0, rel=1e-9)
    assert to_bps(1.0) == pytest.approx(8_000_000.0, rel=1e-9)
    assert to_bps(0.0) == pytest.approx(1e6 * math.sqrt(800.0) * 0.01, rel=1e-9)
    assert from_bps(10_000.0) == pytest.approx(-1.0, abs=1e-12)
    assert from_bps(8_000_000.0) == pytest.approx(1.0, abs=1e-12)


def test_transform_round_trip():
    rng = np.random.default_rng(0)
    bps = np.exp(rng.uniform(math.log(MIN_BPS), math.log(MAX_BPS), 100_000))
    back = np.array([to_bps(from_bps(a)) for a in bps])
    assert np.allclose(back, bps, rtol=1e-9, atol=0.0)


def test_transform_monotone():
    rng = np.random.default_rng(1)
    pairs = rng.uniform(-1.0, 1.0, size=(100_000, 2))
    pairs = np.sort(pairs, axis=1)
    pairs = pairs[pairs[:, 0] < pairs[:, 1]]
    lo = np.array([to_bps(a) for a in pairs[:, 0]])
    hi = np.array([to_bps(a) for a in pairs[:, 1]])
    assert np.all(lo < hi)


def test_transform_clamps_and_rejects():
    assert to_bps(2.0) == to_bps(1.0)
    assert to_bps(-3.0) == to_bps(-1.0)
    assert from_bps(1e9) == 1.0
    assert from_bps(1.0) == -1.0
    with pytest.raises(PolicyError):
        to_bps(float("nan"))
    with pytest.raises(PolicyError):
        from_bps(0.0)


def test_normalize_actions_matches_scalar():
    bps = np.array([5e3, 1e4, 3e5, 2e6, 8e6, 2e7])
    assert np.allclose(normalize_actions(bps), [from_bps(b) for b in bps], rtol=0, atol=1e-12)
    with pytest.raises(PolicyError):
        normalize_actions(np.array([1e5, -1.0]))


# ---------------------------------- network ---------------------------------
def test_zero_network_output():
    mean, std = mlp_forward(zero_weights(), np.zeros(OBS_DIM))
    assert mean == 0.0
    assert std == pytest.approx(math.log(2.0))


def test_std_floor():
    w = zero_weights()
    w.head.b[1] = -50.0
    _, std = mlp_forward(w, np.zeros(OBS_DIM))
    assert std == w.std_floor


def test_standardize_uses_stored_stats():
    w = zero_weights()
    x = np.full(OBS_DIM, 4.0)
    w.norm_std = np.full(OBS_DIM, 2.0)
    assert np.all(w.standardize(x) == 2.0)


def test_forward_rejects_bad_width():
    with pytest.raises(PolicyError):
        mlp_forward(zero_weights(), np.zeros(OBS_DIM - 1))


def test_weights_validation():
    net = init_mlp([OBS_DIM, 8, 3], ["tanh", "identity"], np.random.default_rng(0))
    with pytest.raises(WeightsError):
        ModelWeights(np.zeros(OBS_DIM), np.ones(OBS_DIM), net)
    net = init_mlp([OBS_DIM, 8, 2], ["tanh", "identity"], np.random.default_rng(0))
    with pytest.raises(WeightsError):
        ModelWeights(np.zeros(OBS_DIM - 1), np.ones(OBS_DIM - 1), net)
    with pytest.raises(WeightsError):
        ModelWeights(np.zeros(OBS_DIM), np.zeros(OBS_DIM), net)


# -------------------------------- weight files -------------------------------
def test_weights_round_trip(tmp_path):
    w = random_weights()
    path = tmp_path / "policy.bwe"
    save_weights(w, path)
    loaded = load_weights(path)
    assert loaded.std_floor == w.std_floor
    assert np.array_equal(loaded.norm_mean, w.norm_mean)
    assert np.array_equal(loaded.norm_std, w.norm_std)
    for a, b in zip(loaded.net.params(), w.net.params()):
        assert a.dtype == np.float32
        assert np.array_equal(a, b)
    x = np.random.default_rng(1).standard_normal(OBS_DIM)
    assert mlp_forward(loaded, x) == mlp_forward(w, x)


def test_weights_file_is_stable(tmp_path):
    save_weights(random_weights(), tmp_path / "a.bwe")
    save_weights(random_weights(), tmp_path / "b.bwe")
    assert (tmp_path / "a.bwe").read_bytes() == (tmp_path / "b.bwe").read_bytes()


def saved_bytes(tmp_path):
    path = tmp_path / "policy.bwe"
    save_weights(random_weights(hidden=8), path)
    return path.read_bytes()


def test_rejects_wrong_observation_width(tmp_path):
    data = saved_bytes(tmp_path)
    assert b'"obs_dim": 150' in data
    path = tmp_path / "narrow.bwe"
    path.write_bytes(data.replace(b'"obs_dim": 150', b'"obs_dim": 149'))
    with pytest.raises(WeightsError, match="149"):
        load_weights(path)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: b"garbage",
        lambda d: b"XXXX" + d[4:],
        lambda d: d[:4] + struct.pack("<I", 2) + d[8:],
        lambda d: d[:-8],
        lambda d: d + b"\0\0\0\0",
        lambda d: d[:-4] + np.float32(np.nan).tobytes(),
    ],
)
def test_rejects_corrupt_files(tmp_path, mutate):
    path = tmp_path / "bad.bwe"
    path.write_bytes(mutate(saved_bytes(tmp_path)))
    with pytest.raises(WeightsError):
        load_weights(path)


def test_missing_file(tmp_path):
    with pytest.raises(WeightsError):
        load_weights(tmp_path / "none.bwe")


# --------------------------------- estimators --------------------------------
def test_heuristic_rules():
    state = HeuristicState(rate_bps=1e6)
    assert heuristic_estimate(state, MIStats(receiving_rate_bps=1e6, queuing_delay_ms=0.0)) == pytest.approx(1.05e6)
    state = HeuristicState(rate_bps=1e6)
    assert heuristic_estimate(state, MIStats(receiving_rate_bps=1e6, queuing_delay_ms=200.0)) == pytest.approx(8.5e5)
    state = HeuristicState(rate_bps=3e5)
    assert heuristic_estimate(state, MIStats()) == 3e5
    state = HeuristicState(rate_bps=7.9e6)
    assert heuristic_estimate(state, MIStats(receiving_rate_bps=7.9e6)) == MAX_BPS


def test_heuristic_always_in_range():
    rng = np.random.default_rng(4)
    state = HeuristicState()
    for _ in range(10_000):
        mi = MIStats(receiving_rate_bps=float(rng.uniform(0, 2e7)), queuing_delay_ms=float(rng.uniform(0, 100)))
        assert MIN_BPS <= heuristic_estimate(state, mi) <= MAX_BPS


def test_heuristic_estimator_reads_latest_mi():
    est = HeuristicEstimator()
    assert est.estimate(obs_with(MIStats(receiving_rate_bps=1e6))) == pytest.approx(1.02e6)
    est.reset()
    assert est.state.rate_bps == 300_000.0


def test_oracle_estimator():
    est = OracleEstimator(fixed_trace(7e5, 1000))
    assert est.estimate(Observation(np.zeros(OBS_DIM), step=3)) == 7e5
    assert est.estimate(Observation(np.zeros(OBS_DIM), step=100)) == 7e5


def test_noisy_estimator():
    obs = obs_with(MIStats())
    quiet = NoisyEstimator(ConstantEstimator(2e5), 0.0, seed=1)
    assert quiet.estimate(obs) == pytest.approx(2e5, rel=1e-9)

    noisy = NoisyEstimator(ConstantEstimator(2e5), 0.3, seed=1)
    first = [noisy.estimate(obs) for _ in range(20)]
    noisy.reset()
    assert [noisy.estimate(obs) for _ in range(20)] == first
    assert len(set(first)) > 1
    assert all(MIN_BPS <= a <= MAX_BPS for a in first)
    with pytest.raises(PolicyError):
        NoisyEstimator(ConstantEstimator(2e5), -1.0)


def test_neural_estimator_modes():
    w = random_weights(hidden=16)
    obs = Observation(np.random.default_rng(2).standard_normal(OBS_DIM))
    mean, _ = mlp_forward(w, obs)
    assert NeuralEstimator(w).estimate(obs) == to_bps(mean)
    sampler = NeuralEstimator(w, deterministic=False, seed=3)
    draws = [sampler.estimate(obs) for _ in range(5)]
    sampler.reset()
    assert [sampler.estimate(obs) for _ in range(5)] == draws


def test_constant_estimator_rejects():
    with pytest.raises(PolicyError):
        ConstantEstimator(0.0)
    with pytest.raises(PolicyError):
        ConstantEstimator(float("inf"))


# -------------------------------- policy specs -------------------------------
def test_parse_specs(tmp_path):
    assert parse_policy_spec("heuristic").label == "heuristic"
    noisy = parse_policy_spec("heuristic:0.2")
    assert noisy.label == "heuristic:0.2"
    assert isinstance(noisy.build(seed=4), NoisyEstimator)
    assert isinstance(parse_policy_spec("heuristic").build(), HeuristicEstimator)
    const = parse_policy_spec("constant:500000")
    assert const.param == 500000.0
    assert const.build().estimate(obs_with(MIStats())) == 500000.0
    oracle = parse_policy_spec("oracle")
    assert isinstance(oracle.build(fixed_trace(1e6, 1000)), OracleEstimator)
    with pytest.raises(PolicyError):
        oracle.build()

    path = tmp_path / "model.bwe"
    save_weights(random_weights(hidden=8), path)
    spec = parse_policy_spec(f"weights:{path}")
    assert spec.label == "weights:model"
    assert MIN_BPS <= spec.build().estimate(obs_with(MIStats())) <= MAX_BPS


@pytest.mark.parametrize("text", ["bogus", "constant:-5", "constant:0", "constant:abc", "heuristic:nan", "weights:", "oracle:1"])
def test_parse_bad_specs(text):
    with pytest.raises(PolicyError):
        parse_policy_spec(text)


def test_parse_missing_weights(tmp_path):
    with pytest.raises(WeightsError):
        parse_policy_spec(f"weights:{tmp_path / 'none.bwe'}")
