import numpy as np
import pytest

from fedlcbq.data import make_behavior_policy, sample_agent_datasets
from fedlcbq.diagnostics import replay_trace
from fedlcbq.engine import HyperParams, run_fedlcbq
from fedlcbq.errors import TraceParseError
from fedlcbq.generators import random_mdp
from fedlcbq.schedules import build_schedule
from fedlcbq.trace import TRACE_MAGIC, VISIT_DTYPE, RunTrace


@pytest.fixture(scope="module")
def traced():
    mdp = random_mdp(3, 2, 3, 1)
    pol, _ = make_behavior_policy("uniform", mdp)
    ds = sample_agent_datasets(mdp, [pol] * 3, 60, 42)
    res = run_fedlcbq(mdp, ds, build_schedule("exponential", 60, H=3, gamma=0.5),
                      HyperParams(c_B=0.01), trace=True)
    return mdp, pol, res.trace


def test_visit_records(traced):
    _, _, tr = traced
    assert len(tr.visits) == tr.K * tr.H * tr.M
    assert tr.visits.dtype == VISIT_DTYPE
    assert np.all(np.diff(tr.visits["k"].astype(int)) >= 0)
    first = tr.visits[:tr.M]
    assert np.all(first["eta"] == 1.0) and np.all(first["h"] == 0)


def test_round_trip_bit_exact(tmp_path, traced):
    _, _, tr = traced
    path = tmp_path / "t.flcqt"
    tr.save(path)
    back = RunTrace.load(path)
    assert back.to_bytes() == tr.to_bytes()
    assert np.array_equal(back.visits, tr.visits)
    for a, b in zip(back.snapshots, tr.snapshots):
        for key in ("Q", "V", "B", "alpha"):
            assert np.array_equal(a[key], b[key])
    assert back.schedule == tr.schedule and back.zeta1 == tr.zeta1
    assert back.snapshot_at(60)["k"] == 60


def test_replay_reproduces_trace(traced):
    mdp, pol, tr = traced
    assert replay_trace(tr, mdp, [pol] * tr.M).to_bytes() == tr.to_bytes()


def test_parse_errors_carry_offsets(traced):
    _, _, tr = traced
    blob = tr.to_bytes()
    with pytest.raises(TraceParseError) as err:
        RunTrace.from_bytes(b"NOPE00" + blob[6:])
    assert err.value.offset == 0
    for cut in (len(TRACE_MAGIC) + 2, len(blob) // 2, len(blob) - 1):
        with pytest.raises(TraceParseError) as err:
            RunTrace.from_bytes(blob[:cut])
        assert 0 < err.value.offset <= cut
    with pytest.raises(TraceParseError, match="trailing"):
        RunTrace.from_bytes(blob + b"x")
    bad = bytearray(blob)
    bad[len(TRACE_MAGIC)] = ord("Z")
    with pytest.raises(TraceParseError, match="unknown block tag") as err:
        RunTrace.from_bytes(bytes(bad))
    assert err.value.offset == len(TRACE_MAGIC)
