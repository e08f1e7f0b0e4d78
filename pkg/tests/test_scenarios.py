import pytest

from bwe_bench.errors import ConfigError
from bwe_bench.scenarios import Scenario, build_suite, family_plan, make_trace, suite_scenarios
from bwe_bench.traces import generate


def test_default_suite():
    plans = build_suite("default")
    assert len(plans) == 160
    assert len({p.call_id for p in plans}) == 160
    assert len({p.call_seed for p in plans}) == 160
    assert plans[0].call_id == "low_bw_101_r00"
    assert plans[-1].call_id == "fluctuating_burst_loss_502_r09"


def test_suite_families_in_canonical_order():
    scenarios, repeats = suite_scenarios("default")
    assert repeats == 10
    families = [s.family for s in scenarios]
    assert families == ["low_bw"] * 4 + ["high_bw"] * 4 + ["fluctuating_bw"] * 4 + ["burst_loss"] * 2 + [
        "fluctuating_burst_loss"
    ] * 2


def test_preliminary_suite():
    assert len(build_suite("preliminary")) == 24
    assert len(build_suite("preliminary", repeats=1)) == 8


def test_family_filter():
    plans = build_suite("family:low_bw")
    assert len(plans) == 40
    assert {p.scenario.family for p in plans} == {"low_bw"}


@pytest.mark.parametrize("name", ["nightly", "family:bogus", "family:custom"])
def test_unknown_suite(name):
    with pytest.raises(ConfigError):
        build_suite(name)


def test_call_seeds_follow_master_seed():
    a = build_suite("preliminary", master_seed=1)
    b = build_suite("preliminary", master_seed=1)
    c = build_suite("preliminary", master_seed=2)
    assert [p.call_seed for p in a] == [p.call_seed for p in b]
    assert [p.call_seed for p in a] != [p.call_seed for p in c]
    assert [p.call_id for p in a] == [p.call_id for p in c]


def test_family_plan():
    plans = family_plan("high_bw", 7, repeats=3)
    assert [p.call_id for p in plans] == ["high_bw_7_r00", "high_bw_7_r01", "high_bw_7_r02"]
    assert len(family_plan("high_bw", 7)) == 1
    with pytest.raises(ConfigError):
        family_plan("mars", 1)


def test_make_trace_matches_generator():
    plan = family_plan("fluctuating_bw", 12)[0]
    assert plan.scenario == Scenario("fluctuating_bw", 12)
    assert make_trace(plan, 30_000) == generate("fluctuating_bw", 12, 30_000)
