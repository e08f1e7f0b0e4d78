import numpy as np
import pytest

from bwe_bench.dataio import CallTrajectory, NetworkOutcome, Step
from bwe_bench.features import OBS_DIM


def build_call(n=10, call_id="c1", *, seed=0, truth=True, policy_id="heuristic", family="low_bw"):
    rng = np.random.default_rng(seed)
    steps = []
    for _ in range(n):
        steps.append(
            Step(
                observation=rng.standard_normal(OBS_DIM),
                bandwidth_prediction_bps=float(rng.uniform(1e5, 2e6)),
                r_audio=float(rng.uniform(0, 5)),
                r_video=float(rng.uniform(0, 5)),
                true_capacity_bps=float(rng.uniform(1e5, 2e6)) if truth else None,
                true_loss_rate=float(rng.uniform(0, 0.1)) if truth else None,
                outcome=NetworkOutcome(
                    receiving_rate_bps=float(rng.uniform(1e5, 2e6)),
                    delay_ms=float(rng.uniform(50, 300)),
                    queuing_delay_ms=float(rng.uniform(0, 200)),
                    loss_ratio=float(rng.uniform(0, 0.2)),
                )
                if truth
                else None,
            )
        )
    return CallTrajectory(call_id, policy_id, steps, family=family)


@pytest.fixture
def make_call():
    return build_call
