import csv

import numpy as np
import pytest

from bwe_bench.config import ProxyRewardConfig
from bwe_bench.dataio import CallTrajectory, NetworkOutcome, Step
from bwe_bench.errors import MetricError
from bwe_bench.evalx import (
    LegScore,
    StepRecord,
    audio_reward,
    e_minus,
    e_plus,
    leg_score,
    mse,
    proxy_rewards,
    rank_policies,
    records_from,
    relative_errors,
    report,
    score,
    video_reward,
)
from bwe_bench.features import OBS_DIM


# ------------------------------------ accuracy --------------------------------
def test_mse_units():
    records = [StepRecord(2e6, 1e6)]
    assert mse(records) == 1e12
    assert mse(records, "mbps2") == 1.0
    with pytest.raises(MetricError):
        mse(records, "kbps")
    with pytest.raises(MetricError):
        mse([])


def test_error_rates_examples():
    records = [StepRecord(2e6, 1e6), StepRecord(5e5, 1e6)]
    assert e_plus(records) == pytest.approx(0.5)
    assert e_minus(records) == pytest.approx(0.25)
    perfect = [StepRecord(1e6, 1e6)] * 3
    assert mse(perfect) == e_plus(perfect) == e_minus(perfect) == 0.0


def test_metrics_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 200))
        a = rng.uniform(1e4, 8e6, n)
        c = rng.uniform(1e4, 8e6, n)
        records = [StepRecord(float(x), float(y)) for x, y in zip(a, c)]
        want_mse = sum((x - y) ** 2 for x, y in zip(a, c)) / n
        want_plus = sum(max(0.0, (x - y) / y) for x, y in zip(a, c)) / n
        want_minus = sum(max(0.0, (y - x) / y) for x, y in zip(a, c)) / n
        assert mse(records) == pytest.approx(want_mse, rel=1e-9)
        assert e_plus(records) == pytest.approx(want_plus, rel=1e-9, abs=1e-12)
        assert e_minus(records) == pytest.approx(want_minus, rel=1e-9, abs=1e-12)


def test_over_and_under_are_exclusive():
    rng = np.random.default_rng(1)
    a = rng.uniform(1e4, 8e6, 1_000_000)
    c = rng.uniform(1e4, 8e6, 1_000_000)
    over, under = relative_errors(a, c)
    assert np.all((over == 0.0) | (under == 0.0))
    assert np.all(over >= 0.0) and np.all(under >= 0.0)


def test_records_need_positive_values():
    with pytest.raises(MetricError):
        StepRecord(0.0, 1e6)
    with pytest.raises(MetricError):
        StepRecord(1e6, -1.0)


# ---------------------------------- proxy rewards -----------------------------
CFG = ProxyRewardConfig()


def test_perfect_conditions_score_five():
    assert audio_reward(0.0, 0.0, CFG) == pytest.approx(5.0)
    assert video_reward(1e6, 1e6, 0.0, 0.0, CFG) == pytest.approx(5.0)


def test_total_loss_silences_audio():
    assert audio_reward(1.0, 0.0, CFG) == 0.0
    assert video_reward(1e6, 1e6, 1.0, 0.0, CFG) == 0.0


def test_rewards_monotone():
    losses = np.linspace(0.0, 1.0, 50)
    audio = [audio_reward(x, 20.0, CFG) for x in losses]
    video = [video_reward(8e5, 1e6, x, 20.0, CFG) for x in losses]
    assert all(a >= b for a, b in zip(audio, audio[1:]))
    assert all(a >= b for a, b in zip(video, video[1:]))

    delays = np.linspace(0.0, 2000.0, 50)
    audio = [audio_reward(0.01, d, CFG) for d in delays]
    video = [video_reward(8e5, 1e6, 0.01, d, CFG) for d in delays]
    assert all(a >= b for a, b in zip(audio, audio[1:]))
    assert all(a >= b for a, b in zip(video, video[1:]))
    assert all(0.0 <= v <= 5.0 for v in audio + video)


def outcome_step(rate, loss=0.0, qdelay=0.0, capacity=1e6):
    return Step(
        np.zeros(OBS_DIM),
        1e6,
        true_capacity_bps=capacity,
        true_loss_rate=0.0,
        outcome=NetworkOutcome(rate, 50.0 + qdelay, qdelay, loss),
    )


def test_proxy_rewards_per_step():
    leg = CallTrajectory("c", "p", [outcome_step(1e6), outcome_step(0.0), outcome_step(5e5, loss=0.5)])
    rewards = proxy_rewards(leg)
    assert rewards[0] == pytest.approx((5.0, 5.0))
    assert rewards[1] == (0.0, 0.0)
    assert rewards[2][0] < 5.0 and rewards[2][1] < rewards[0][1]

    bare = CallTrajectory("c", "p", [Step(np.zeros(OBS_DIM), 1e6)])
    with pytest.raises(MetricError):
        proxy_rewards(bare)


# -------------------------------------- score ---------------------------------
def leg(call_id, steps, r_audio, r_video, policy="p", family="low_bw", capacity=1e6, prediction=1e6):
    return CallTrajectory(
        call_id,
        policy,
        [
            Step(
                np.zeros(OBS_DIM),
                prediction,
                r_audio,
                r_video,
                true_capacity_bps=capacity,
                true_loss_rate=0.0,
                outcome=NetworkOutcome(8e5, 60.0, 10.0, 0.0),
            )
            for _ in range(steps)
        ],
        family,
    )


def test_leg_score():
    s = leg_score(leg("a", 4, 2.0, 3.5))
    assert s.score == 5.5
    assert s.steps == 4
    with pytest.raises(MetricError):
        leg_score(CallTrajectory("x", "p"))


def test_perfect_legs_score_ten():
    legs = [LegScore(f"c{i}", 5.0, 5.0, 100) for i in range(8)]
    assert score(legs, resamples=500) == (10.0, (10.0, 10.0))


def test_score_is_mean_of_leg_means():
    s, (lo, hi) = score([LegScore("a", 3.0, 3.0, 10), LegScore("b", 4.0, 4.0, 10)], resamples=2000)
    assert s == 7.0
    assert 6.0 <= lo <= s <= hi <= 8.0


def test_unequal_leg_lengths_weigh_equally():
    long_leg = leg_score(leg("a", 100, 1.0, 1.0))
    short_leg = leg_score(leg("b", 1, 4.0, 4.0))
    s, _ = score([long_leg, short_leg], resamples=200)
    assert s == 5.0


def test_score_ignores_leg_order():
    rng = np.random.default_rng(3)
    legs = [LegScore(f"c{i}", float(rng.uniform(0, 5)), float(rng.uniform(0, 5)), 10) for i in range(12)]
    assert score(legs, 1000, seed=4) == score(list(reversed(legs)), 1000, seed=4)


def test_single_leg_collapses_interval():
    assert score([LegScore("a", 2.0, 1.0, 10)]) == (3.0, (3.0, 3.0))
    with pytest.raises(MetricError):
        score([])


def test_rank_policies_ties():
    rows = rank_policies(
        {
            "a": (8.0, (7.5, 8.5)),
            "b": (7.8, (7.2, 8.1)),
            "c": (5.0, (4.5, 5.5)),
        }
    )
    assert [(r.rank, r.policy, r.tie) for r in rows] == [(1, "a", True), (1, "b", True), (3, "c", False)]


# -------------------------------------- report --------------------------------
def results():
    return {
        "low_bw": {
            "oracle": [leg(f"l{i}", 5, 4.0, 4.0, "oracle") for i in range(3)],
            "heuristic": [leg(f"l{i}", 5, 3.0, 2.0, "heuristic", prediction=2e6) for i in range(3)],
        },
        "high_bw": {
            "oracle": [leg(f"h{i}", 5, 4.5, 4.5, "oracle", "high_bw") for i in range(2)],
            "heuristic": [leg(f"h{i}", 5, 1.0, 1.0, "heuristic", "high_bw") for i in range(2)],
        },
    }


def read_rows(path):
    with path.open(newline="") as fh:
        return list(csv.reader(fh))


def test_report_tables(tmp_path):
    written = report(results(), tmp_path, resamples=200, plots=False)
    assert {p.name for p in written} == {"low_bw.csv", "high_bw.csv", "ranking.csv"}

    rows = read_rows(tmp_path / "low_bw.csv")
    assert rows[0] == ["policy", "mse_mbps2", "e_plus", "e_minus", "score", "ci_low", "ci_high", "calls"]
    assert [r[0] for r in rows[1:]] == ["heuristic", "oracle"]
    heuristic = rows[1]
    assert float(heuristic[1]) == pytest.approx(1.0)
    assert float(heuristic[2]) == pytest.approx(1.0)
    assert float(heuristic[3]) == 0.0
    assert float(heuristic[4]) == 5.0
    assert heuristic[7] == "3"

    ranking = read_rows(tmp_path / "ranking.csv")
    assert ranking[0] == ["rank", "policy", "score", "ci_low", "ci_high"]
    assert [r[:2] for r in ranking[1:]] == [["1", "oracle"], ["2", "heuristic"]]


def test_report_plots(tmp_path):
    written = report(results(), tmp_path, resamples=100)
    names = {p.name for p in written}
    for family in ("low_bw", "high_bw"):
        for metric in ("receiving_rate", "delay", "loss", "audio_reward", "video_reward"):
            assert f"{family}_{metric}.png" in names
    assert (tmp_path / "low_bw_delay.png").stat().st_size > 0


def test_report_is_deterministic(tmp_path):
    report(results(), tmp_path / "a", resamples=300, seed=7, plots=False)
    report(results(), tmp_path / "b", resamples=300, seed=7, plots=False)
    for name in ("low_bw.csv", "high_bw.csv", "ranking.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_report_errors(tmp_path):
    with pytest.raises(MetricError):
        report({}, tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(MetricError):
        report(results(), blocker, resamples=10, plots=False)


def test_records_from_requires_ground_truth(make_call):
    with pytest.raises(MetricError):
        records_from(make_call(3, truth=False))
    assert len(records_from(make_call(3))) == 3
