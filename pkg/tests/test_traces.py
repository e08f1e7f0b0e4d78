import pytest

from bwe_bench.config import load_family_ranges
from bwe_bench.errors import TraceError
from bwe_bench.traces import (
    GENERATED_FAMILIES,
    LossSpec,
    Trace,
    TraceFamily,
    TraceSegment,
    capacity_at,
    fixed_trace,
    format_trace,
    generate,
    loss_rate_at,
    parse_trace,
    read_trace,
    segment_index,
    write_trace,
)


def two_segments():
    return Trace(
        (TraceSegment(1000.0, 1e6), TraceSegment(500.0, 2e6, LossSpec("gilbert", (0.02, 4.0)))),
        TraceFamily.CUSTOM,
        0,
    )


def test_generate_deterministic():
    for fam in GENERATED_FAMILIES:
        trace = generate(fam, 11, 60_000)
        assert trace == generate(fam, 11, 60_000)
        assert trace.family is fam
        assert trace.total_duration_ms == pytest.approx(60_000)


def test_generate_seed_matters():
    assert generate("low_bw", 1, 10_000) != generate("low_bw", 2, 10_000)


def test_generated_parameters_in_range():
    _, ranges = load_family_ranges()
    for fam in GENERATED_FAMILIES:
        fr = ranges[fam.value]
        for seed in range(1000):
            trace = generate(fam, seed, 120_000)
            assert trace.total_duration_ms == pytest.approx(120_000)
            for seg in trace.segments:
                assert fr.capacity_bps[0] <= seg.capacity_bps <= fr.capacity_bps[1]
                if fr.segment_ms is not None:
                    assert fr.segment_ms[0] <= seg.duration_ms <= fr.segment_ms[1]
                if fr.p_enter is not None:
                    assert seg.loss.kind == "gilbert"
                    p_enter, burst = seg.loss.params
                    assert fr.p_enter[0] <= p_enter <= fr.p_enter[1]
                    assert fr.mean_burst[0] <= burst <= fr.mean_burst[1]
                else:
                    assert seg.loss.kind == "none"


def test_fluctuating_tail_segment_in_range():
    _, ranges = load_family_ranges()
    lo, hi = ranges["fluctuating_bw"].segment_ms
    for duration in (5_500.0, 21_000.0, 26_000.0, 41_234.5):
        for seed in range(200):
            trace = generate("fluctuating_bw", seed, duration)
            assert trace.total_duration_ms == pytest.approx(duration)
            assert all(lo <= s.duration_ms <= hi for s in trace.segments)
    short = generate("fluctuating_burst_loss", 4, 3000.0)
    assert [s.duration_ms for s in short.segments] == [3000.0]


def test_fixed_families_have_one_segment():
    assert len(generate("low_bw", 3, 120_000).segments) == 1
    assert len(generate("burst_loss", 3, 120_000).segments) == 1
    assert len(generate("fluctuating_bw", 3, 120_000).segments) > 1


def test_generate_rejects():
    with pytest.raises(TraceError):
        generate("custom", 0, 1000)
    with pytest.raises(TraceError):
        generate("wifi", 0, 1000)
    with pytest.raises(TraceError):
        generate("low_bw", 0, 0)


def test_lookup():
    trace = two_segments()
    assert capacity_at(trace, 0.0) == 1e6
    assert capacity_at(trace, 999.9) == 1e6
    assert capacity_at(trace, 1000.0) == 2e6
    assert capacity_at(trace, 1499.0) == 2e6
    assert segment_index(trace, 1200.0) == 1
    assert loss_rate_at(trace, 0.0) == 0.0
    assert loss_rate_at(trace, 1200.0) == pytest.approx(0.02 / (0.02 + 0.25))
    with pytest.raises(TraceError):
        capacity_at(trace, 1500.0)
    with pytest.raises(TraceError):
        capacity_at(trace, -1.0)


def test_loss_spec_validation():
    assert LossSpec("bernoulli", (0.1,)).stationary_rate() == 0.1
    with pytest.raises(TraceError):
        LossSpec("gilbert", (0.1, 0.5))
    with pytest.raises(TraceError):
        LossSpec("bernoulli", (1.5,))
    with pytest.raises(TraceError):
        LossSpec("gilbert", (0.1,))
    with pytest.raises(TraceError):
        LossSpec("ge", ())


def test_segment_validation():
    with pytest.raises(TraceError):
        TraceSegment(0.0, 1e6)
    with pytest.raises(TraceError):
        TraceSegment(10.0, -1.0)
    with pytest.raises(TraceError):
        Trace((), TraceFamily.CUSTOM, 0)


def test_text_format_round_trip(tmp_path):
    trace = generate("fluctuating_burst_loss", 5, 60_000)
    assert parse_trace(format_trace(trace)) == trace
    path = tmp_path / "t.trace"
    write_trace(trace, path)
    assert read_trace(path) == trace
    assert fixed_trace(5e5, 1000) == parse_trace("custom 0\n1000 500000 none  # one segment\n")


@pytest.mark.parametrize(
    "text",
    [
        "low_bw 1\n1000 -5 none\n",
        "low_bw 1\n1000 1e6 gilbert 0.5\n",
        "low_bw 1\n",
        "bogus 1\n1000 1e6 none\n",
        "low_bw 1\n1000 abc none\n",
        "low_bw 1\n1000 nan none\n",
        "low_bw\n1000 1e6 none\n",
        "",
    ],
)
def test_parse_errors(text):
    with pytest.raises(TraceError):
        parse_trace(text)


def test_read_missing(tmp_path):
    with pytest.raises(TraceError):
        read_trace(tmp_path / "missing.trace")
