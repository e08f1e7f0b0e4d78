import io

from bwe_bench.rl import TrainLogRow
from bwe_bench.ui import ProgressPrinter, UIThrottle, build_call_line, build_progress_bar, build_train_line


def test_progress_bar_basic():
    assert build_progress_bar(0.0, 10) == "-" * 10
    assert build_progress_bar(1.0, 10) == "#" * 10
    assert build_progress_bar(0.5, 10) == "#" * 5 + "-" * 5
    assert build_progress_bar(2.0, 4) == "####"
    assert build_progress_bar(0.5, 0) == ""
    assert build_progress_bar(0.25, 4, "=") == "=---"


def test_throttle():
    t = UIThrottle(min_interval_sec=1.0)
    assert t.should_render(now=10.0)
    assert not t.should_render(now=10.5)
    assert t.should_render(now=11.0)


def test_call_line():
    line = build_call_line("low_bw_101_r00", "heuristic", 7.25, 0.0123, 0.1, 0.2)
    assert line == "low_bw_101_r00 | heuristic | S  7.25 | mse 0.0123 Mbps^2 | e+ 0.100 | e- 0.200"
    line = build_call_line("c", "p", 0.0, None, None, None, error="step 4: estimator returned nan")
    assert "mse n/a Mbps^2" in line
    assert line.endswith("| aborted: step 4: estimator returned nan")


def test_train_line():
    line = build_train_line(TrainLogRow(50, 0.5, 1.25, -0.75, 1.0), 100)
    assert line.startswith("[" + "#" * 10 + "-" * 10 + "] step 50/100")
    assert "q 1.25" in line


def test_progress_printer():
    out = io.StringIO()
    printer = ProgressPrinter(3, "calls", stream=out, throttle=UIThrottle(min_interval_sec=3600.0))
    for _ in range(3):
        printer.advance()
    lines = out.getvalue().splitlines()
    assert lines[0].startswith("calls [")
    assert lines[-1].endswith("3/3")
    assert len(lines) == 2
