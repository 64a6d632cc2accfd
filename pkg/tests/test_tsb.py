"""Trace validators: a clean hand-built trace passes, every broken promise
is caught by the matching check."""

from __future__ import annotations

import hashlib

from quesera.tsb import (
    RunTrace,
    TsbParams,
    validate_b_in_r,
    validate_delivery,
    validate_fifo,
    validate_fullspread,
    validate_lockstep,
    validate_substeps,
    validate_thresholds,
)


def d(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()


def two_node_trace() -> RunTrace:
    """Two nodes, one step, everyone receives everything, node 0's message
    witnessed by both."""
    t = RunTrace(n=2, layers={"x": TsbParams(2, 2, 1, 2)})
    t.sends = [(1, "x", 1, 0, d(b"m0")), (2, "x", 1, 1, d(b"m1"))]
    full = ((0, d(b"m0")), (1, d(b"m1")))
    t.rets = [
        (3, "x", 1, 0, full, ((0, d(b"m0")),)),
        (4, "x", 1, 1, full, ((0, d(b"m0")),)),
    ]
    return t


def test_clean_trace_passes_everything():
    t = two_node_trace()
    assert validate_lockstep(t) == []
    assert validate_thresholds(t) == []
    assert validate_fullspread(t) == []
    assert validate_b_in_r(t) == []


def test_lockstep_catches_foreign_payload():
    t = two_node_trace()
    r = ((0, d(b"m0")), (1, d(b"FORGED")))
    t.rets[0] = (3, "x", 1, 0, r, ())
    assert any("foreign payload" in s for s in validate_lockstep(t))


def test_lockstep_catches_never_sent():
    t = two_node_trace()
    r = ((0, d(b"m0")), (7, d(b"ghost")))
    t.rets[0] = (3, "x", 1, 0, r, ())
    assert any("never sent" in s for s in validate_lockstep(t))


def test_lockstep_catches_gaps_and_silent_stops():
    t = two_node_trace()
    t.rets[1] = (4, "x", 3, 1, t.rets[1][4], ())  # returned step 3, never 1..2
    assert any("expected" in s for s in validate_lockstep(t))

    t = two_node_trace()
    del t.rets[1]  # node 1 sent but never returned, and no crash recorded
    assert any("without a crash" in s for s in validate_lockstep(t))
    t.crashes[1] = (1, "after")  # ...a recorded crash excuses it
    assert validate_lockstep(t) == []


def test_thresholds_catch_thin_sets():
    t = two_node_trace()
    t.rets[0] = (3, "x", 1, 0, ((0, d(b"m0")),), ((0, d(b"m0")),))
    bad = validate_thresholds(t)
    assert any("|R senders| 1 < t_r=2" in s for s in bad)

    t = two_node_trace()
    t.rets[0] = (3, "x", 1, 0, t.rets[0][4], ())
    assert any("|B senders| 0 < t_b=1" in s for s in validate_thresholds(t))


def test_spread_counts_silent_nodes_as_reached():
    # node 1 never returns (crashed): a B message present only in node 0's R
    # still spreads to 1 (returned) + 1 (silent) = 2 >= t_s
    t = two_node_trace()
    t.crashes[1] = (1, "before")
    del t.sends[1]
    t.rets = [(3, "x", 1, 0, ((0, d(b"m0")),), ((0, d(b"m0")),))]
    params = TsbParams(2, 1, 1, 2)
    assert validate_thresholds(t, params) == []

    # but a returned R missing the B message does count against it
    t = two_node_trace()
    t.rets[0] = (3, "x", 1, 0, ((0, d(b"m0")), (1, d(b"m1"))), ((1, d(b"m1")),))
    t.rets[1] = (4, "x", 1, 1, ((0, d(b"m0")),), ())
    bad = validate_thresholds(t)  # m1 only in node 0's returned R: reach 1 < 2
    assert any("reached 1 < t_s=2" in s for s in bad)


def test_fullspread_and_containment():
    t = two_node_trace()
    # node 1's R lost node 0's message, but node 0 still has it in B
    t.rets[1] = (4, "x", 1, 1, ((1, d(b"m1")),), ())
    assert any("missing in R of node 1" in s for s in validate_fullspread(t))

    t = two_node_trace()
    t.rets[0] = (3, "x", 1, 0, ((0, d(b"m0")),), ((1, d(b"m1")),))
    assert any("B not within R" in s for s in validate_b_in_r(t))


def test_substeps_counts_and_ordering():
    t = RunTrace(n=1, layers={"o": TsbParams(1, 1, 0, 0), "i": TsbParams(1, 1, 0, 0)})
    t.sends = [(1, "o", 1, 0, d(b"m")), (2, "i", 1, 0, d(b"m")),
               (4, "i", 2, 0, d(b"g"))]
    t.rets = [(3, "i", 1, 0, ((0, d(b"m")),), ()),
              (5, "i", 2, 0, ((0, d(b"g")),), ()),
              (6, "o", 1, 0, ((0, d(b"m")),), ())]
    assert validate_substeps(t, "o", "i", 2) == []
    assert any("want x3" in s for s in validate_substeps(t, "o", "i", 3))
    # outer returning before its inner sub-steps is a nesting violation
    t.rets[2] = (4, "o", 1, 0, ((0, d(b"m")),), ())
    assert any("before its" in s for s in validate_substeps(t, "o", "i", 2))


def test_transport_checks():
    t = RunTrace(n=2, layers={"x": TsbParams(2, 1, 0, 0)})
    t.xmits = [(1, 0, 1, 1, 10), (2, 0, 1, 2, 10)]
    t.dlvrs = [(3, 0, 1, 1), (4, 0, 1, 2)]
    assert validate_fifo(t) == []
    assert validate_delivery(t) == []

    t.dlvrs = [(3, 0, 1, 2), (4, 0, 1, 1)]  # out of order
    assert any("after" in s for s in validate_fifo(t))

    t.dlvrs = [(3, 0, 1, 1)]  # one frame evaporated
    assert any("2 sent, 1 delivered" in s for s in validate_delivery(t))


def test_serialization_is_stable():
    a, b = two_node_trace(), two_node_trace()
    assert a.serialize() == b.serialize()
    assert a.serialize().startswith("0,0,run:n=2:x:2/1/2,-\n")
