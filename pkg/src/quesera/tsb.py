"""Threshold synchronous broadcast: contract types and trace validators.

A layer satisfying the contract exposes ``broadcast(m) -> (R, B)`` where the
call made at logical step s returns exactly one step later, R holds the step-s
messages of at least ``t_r`` distinct senders, B holds messages of at least
``t_b`` senders, and every message in B reached the step-s receive sets of at
least ``t_s`` nodes (nodes that stopped mid-run count: the message was on the
wire to them and they would receive it, only too late to matter).

The validators here replay a :class:`RunTrace` against those four promises and
return human-readable violation strings; an empty list means the trace passes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional

Entry = tuple[int, bytes]  # (sender, payload digest) in trace records


@dataclass(frozen=True, slots=True)
class TsbParams:
    """Claimed thresholds of one layer: TSB(t_r, t_b, t_s) over n nodes."""

    n: int
    t_r: int
    t_b: int
    t_s: int

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be positive")
        for name in ("t_r", "t_b", "t_s"):
            v = getattr(self, name)
            if not 0 <= v <= self.n:
                raise ValueError(f"{name}={v} outside 0..n")


@dataclass(frozen=True, slots=True)
class TsbResult:
    """What one broadcast call returned: receive set R and broadcast set B,
    both sets of (sender, payload) pairs."""

    r: frozenset[tuple[int, bytes]]
    b: frozenset[tuple[int, bytes]]

    @property
    def r_senders(self) -> frozenset[int]:
        return frozenset(s for s, _ in self.r)

    @property
    def b_senders(self) -> frozenset[int]:
        return frozenset(s for s, _ in self.b)


def senders(entries: Iterable[Entry]) -> set[int]:
    return {s for s, _ in entries}


@dataclass(frozen=True, slots=True)
class ProposalInfo:
    """Observer-side record of a proposal created during a run."""

    digest: bytes
    prev: bytes
    node: int
    round: int
    created_step: int  # top-layer steps completed when the proposal was made
    priority: int
    length: int


@dataclass
class RunTrace:
    """Everything one simulated run wrote down.

    Layer records use (order, layer, step, node, ...) tuples where ``order``
    is a global monotone counter, ``step`` counts that layer's own broadcast
    calls from 1, and digests identify payloads.  Transport records (``xmits``,
    ``dlvrs``) are kept only at the full trace level.
    """

    n: int
    layers: dict[str, TsbParams]  # claim per recorded layer, top layer first
    sends: list[tuple[int, str, int, int, bytes]] = field(default_factory=list)
    rets: list[tuple[int, str, int, int, tuple[Entry, ...], tuple[Entry, ...]]] = field(
        default_factory=list
    )
    crashes: dict[int, tuple[int, str]] = field(default_factory=dict)
    xmits: list[tuple[int, int, int, int, int]] = field(default_factory=list)
    dlvrs: list[tuple[int, int, int, int]] = field(default_factory=list)
    proposals: dict[bytes, ProposalInfo] = field(default_factory=dict)
    adopts: list[tuple[int, int, int, bytes]] = field(default_factory=list)
    deliveries: list = field(default_factory=list)  # qsc.DeliveryRecord

    @property
    def top_layer(self) -> str:
        return next(iter(self.layers))

    def resolve(self, digest: bytes):
        """Digest -> head proposal info, for chain walks (None if unknown)."""
        return self.proposals.get(digest)

    def serialize(self, include_transport: bool = True) -> str:
        """Line-oriented ``step,node,event,payload-digest`` rendering in event
        order, stable byte-for-byte for identical runs."""
        lines: list[tuple[int, str]] = []
        head = ";".join(
            f"{name}:{p.t_r}/{p.t_b}/{p.t_s}" for name, p in self.layers.items()
        )
        crash = ",".join(
            f"{node}@{step}{phase[0]}" for node, (step, phase) in sorted(self.crashes.items())
        )
        lines.append((-1, f"0,0,run:n={self.n}:{head},{crash or '-'}"))
        for order, layer, step, node, digest in self.sends:
            lines.append((order, f"{step},{node},send:{layer},{digest.hex()[:16]}"))
        for order, layer, step, node, r, b in self.rets:
            lines.append(
                (order, f"{step},{node},ret:{layer},{_set_digest(r)}:{_set_digest(b)}")
            )
        if include_transport:
            for order, sender, dest, seq, size in self.xmits:
                lines.append((order, f"{seq},{sender},xmit:{dest},{size}"))
            for order, sender, dest, seq in self.dlvrs:
                lines.append((order, f"{seq},{dest},dlvr:{sender},-"))
        for node, (step, phase) in sorted(self.crashes.items()):
            lines.append((0, f"{step},{node},crash:{phase},-"))
        for order, node, rnd, digest in self.adopts:
            lines.append((order, f"{rnd},{node},adopt,{digest.hex()[:16]}"))
        for rec in self.deliveries:
            if rec.committed:
                lines.append(
                    (rec.order, f"{rec.round},{rec.node},commit,{rec.digest.hex()[:16]}")
                )
        lines.sort(key=lambda kv: kv[0])
        return "\n".join(text for _, text in lines) + "\n"


def _set_digest(entries: tuple[Entry, ...]) -> str:
    h = hashlib.sha256()
    for sender, digest in sorted(entries):
        h.update(sender.to_bytes(4, "big"))
        h.update(digest)
    return h.hexdigest()[:16]


def _layer_sends(trace: RunTrace, layer: str):
    index: dict[tuple[int, int], bytes] = {}
    dups: list[str] = []
    for _, lname, step, node, digest in trace.sends:
        if lname != layer:
            continue
        if (step, node) in index:
            dups.append(f"node {node} sent twice at {layer} step {step}")
        index[(step, node)] = digest
    return index, dups


def _layer_rets(trace: RunTrace, layer: str):
    per_node: dict[int, list[tuple[int, int, tuple, tuple]]] = {}
    for order, lname, step, node, r, b in trace.rets:
        if lname != layer:
            continue
        per_node.setdefault(node, []).append((order, step, r, b))
    for seq in per_node.values():
        seq.sort()
    return per_node


def validate_lockstep(trace: RunTrace, layer: Optional[str] = None) -> list[str]:
    """Check lock-step synchrony: per node, broadcast calls return one per
    step in order 1,2,3,... and every returned set entry is a message some
    node actually sent at that same layer step."""
    layer = layer or trace.top_layer
    bad: list[str] = []
    send_index, dups = _layer_sends(trace, layer)
    bad.extend(dups)
    per_node = _layer_rets(trace, layer)
    send_steps: dict[int, list[int]] = {}
    for (step, node), _ in send_index.items():
        send_steps.setdefault(node, []).append(step)
    for node, steps in sorted(send_steps.items()):
        steps.sort()
        if steps != list(range(1, len(steps) + 1)):
            bad.append(f"node {node} {layer} send steps not consecutive: {steps[:8]}...")
    for node, seq in sorted(per_node.items()):
        want = 1
        for order, step, r, b in seq:
            if step != want:
                bad.append(f"node {node} {layer} returned step {step}, expected {want}")
            want = step + 1
            if (step, node) not in send_index:
                bad.append(f"node {node} {layer} step {step} returned without sending")
            for tag, entries in (("R", r), ("B", b)):
                for sender, digest in entries:
                    sent = send_index.get((step, sender))
                    if sent is None:
                        bad.append(
                            f"node {node} {layer} step {step} {tag} holds a message "
                            f"never sent by {sender} at that step"
                        )
                    elif sent != digest:
                        bad.append(
                            f"node {node} {layer} step {step} {tag} holds a foreign "
                            f"payload for sender {sender}"
                        )
    for node in sorted(set(send_steps) | set(per_node)):
        sent, got = len(send_steps.get(node, [])), len(per_node.get(node, []))
        if node not in trace.crashes and sent != got:
            bad.append(
                f"node {node} {layer}: {sent} sends but {got} returns without a crash"
            )
    return bad


def validate_thresholds(
    trace: RunTrace, params: Optional[TsbParams] = None, layer: Optional[str] = None
) -> list[str]:
    """Check receive/broadcast/spread thresholds of one layer.

    Spread counts a node toward t_s if its returned step-s R set holds the
    message, or if it never returned that step at all (crashed nodes: every
    broadcast was also addressed to them and delivery is only a matter of
    waiting, so the promise is counted as kept)."""
    layer = layer or trace.top_layer
    params = params or trace.layers[layer]
    bad: list[str] = []
    per_node = _layer_rets(trace, layer)
    by_step: dict[int, list[tuple[int, tuple, tuple]]] = {}
    for node, seq in per_node.items():
        for _, step, r, b in seq:
            by_step.setdefault(step, []).append((node, r, b))
    for step, rows in sorted(by_step.items()):
        present: dict[Entry, int] = {}
        for _, r, _ in rows:
            for entry in r:
                present[entry] = present.get(entry, 0) + 1
        missing = trace.n - len(rows)  # nodes that never returned this step
        for node, r, b in rows:
            if len(senders(r)) < params.t_r:
                bad.append(
                    f"node {node} {layer} step {step}: |R senders| "
                    f"{len(senders(r))} < t_r={params.t_r}"
                )
            if len(senders(b)) < params.t_b:
                bad.append(
                    f"node {node} {layer} step {step}: |B senders| "
                    f"{len(senders(b))} < t_b={params.t_b}"
                )
            for entry in b:
                reach = present.get(entry, 0) + missing
                if reach < params.t_s:
                    bad.append(
                        f"node {node} {layer} step {step}: B message from "
                        f"{entry[0]} reached {reach} < t_s={params.t_s} nodes"
                    )
    return bad


def validate_fullspread(trace: RunTrace, layer: Optional[str] = None) -> list[str]:
    """Check the full-spread property: any step-s B set is contained in every
    step-s R set returned by any node."""
    layer = layer or trace.top_layer
    bad: list[str] = []
    by_step: dict[int, list[tuple[int, frozenset, tuple]]] = {}
    for node, seq in _layer_rets(trace, layer).items():
        for _, step, r, b in seq:
            by_step.setdefault(step, []).append((node, frozenset(r), b))
    for step, rows in sorted(by_step.items()):
        for i, _, b in rows:
            for j, r_j, _ in rows:
                stray = [e for e in b if e not in r_j]
                if stray:
                    bad.append(
                        f"{layer} step {step}: B of node {i} has message from "
                        f"{stray[0][0]} missing in R of node {j}"
                    )
    return bad


def validate_b_in_r(trace: RunTrace, layer: Optional[str] = None) -> list[str]:
    """Layer-local containment check: every returned B is a subset of the
    same call's R (holds for the witnessing layer)."""
    layer = layer or trace.top_layer
    bad: list[str] = []
    for node, seq in sorted(_layer_rets(trace, layer).items()):
        for _, step, r, b in seq:
            if not set(b) <= set(r):
                bad.append(f"node {node} {layer} step {step}: B not within R")
    return bad


def validate_substeps(
    trace: RunTrace, outer: str, inner: str, per_step: int
) -> list[str]:
    """Check that each outer-layer step consumed exactly ``per_step`` steps of
    the inner layer, in order."""
    bad: list[str] = []
    outer_rets = _layer_rets(trace, outer)
    inner_rets = _layer_rets(trace, inner)
    for node, seq in sorted(outer_rets.items()):
        inner_seq = inner_rets.get(node, [])
        if node not in trace.crashes and len(inner_seq) != per_step * len(seq):
            bad.append(
                f"node {node}: {len(seq)} {outer} steps but {len(inner_seq)} "
                f"{inner} steps (want x{per_step})"
            )
            continue
        for k, (order, step, _, _) in enumerate(seq, start=1):
            idx = k * per_step - 1
            if idx < len(inner_seq) and inner_seq[idx][0] > order:
                bad.append(
                    f"node {node}: {outer} step {step} returned before its "
                    f"{inner} sub-steps finished"
                )
    return bad


def validate_fifo(trace: RunTrace) -> list[str]:
    """Per-channel delivery order equals send order (needs a full trace)."""
    bad: list[str] = []
    last: dict[tuple[int, int], int] = {}
    for _, sender, dest, seq in trace.dlvrs:
        prev = last.get((sender, dest), 0)
        if seq <= prev:
            bad.append(f"channel {sender}->{dest}: delivery {seq} after {prev}")
        last[(sender, dest)] = seq
    return bad


def validate_delivery(trace: RunTrace) -> list[str]:
    """Every transmitted unicast was eventually delivered (needs full trace;
    the simulator drains in-flight traffic before finishing a run)."""
    sent: dict[tuple[int, int], int] = {}
    got: dict[tuple[int, int], int] = {}
    for _, sender, dest, _, _ in trace.xmits:
        sent[(sender, dest)] = sent.get((sender, dest), 0) + 1
    for _, sender, dest, _ in trace.dlvrs:
        got[(sender, dest)] = got.get((sender, dest), 0) + 1
    bad = []
    for chan, k in sorted(sent.items()):
        if got.get(chan, 0) != k:
            bad.append(
                f"channel {chan[0]}->{chan[1]}: {k} sent, {got.get(chan, 0)} delivered"
            )
    return bad


def validate_layer(trace: RunTrace, layer: str, full_spread: bool) -> list[str]:
    """Run panel of contract checks for one recorded layer at its claim."""
    params = trace.layers[layer]
    bad = validate_lockstep(trace, layer)
    bad += validate_thresholds(trace, params, layer)
    if full_spread:
        bad += validate_fullspread(trace, layer)
    return bad
