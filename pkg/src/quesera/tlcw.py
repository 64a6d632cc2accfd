"""Witnessed step broadcast: request, acknowledge, announce.

Per step every node broadcasts a ``req`` carrying its message, acks every
same-step req it sees (its own included — the self-ack counts), and once
``t_s`` distinct nodes have acked its message it broadcasts a ``wit``
announcement.  The step completes when announcements from ``t_b`` distinct
senders are in, so the returned B is the witnessed subset of R and every B
member provably reached t_s nodes within the step.

Stale reqs are not acked — an ack would vouch for a message in a step that is
already over.  A message one step ahead completes the current step virally:
its piggybacked R and B sets are merged, and the triggering message itself is
replayed at the start of its own step so the sender's req still lands in our
receive set before any of its announcements (keeping B within R).
"""

from __future__ import annotations

from dataclasses import dataclass

from .tlcr import ConfigError, TransportIntegrityError
from .tsb import TsbParams, TsbResult
from .wire import ACK, REQ, WIT, StepMessage


@dataclass(frozen=True, slots=True)
class TlcwConfig:
    n: int
    t_b: int
    t_s: int
    f: int = 0

    @property
    def claim(self) -> TsbParams:
        # receive threshold matches t_b: B is within R, so t_b senders in B
        # means at least that many in R
        return TsbParams(self.n, self.t_b, self.t_b, self.t_s)


def tlcw_configure(n: int, t_b: int, t_s: int, f: int = 0) -> TlcwConfig:
    bad = []
    if not 0 < t_b <= n - f:
        bad.append(f"0 < t_b <= n - f violated (t_b={t_b}, n={n}, f={f})")
    if not 0 < t_s <= n - f:
        bad.append(f"0 < t_s <= n - f violated (t_s={t_s}, n={n}, f={f})")
    if bad:
        raise ConfigError("; ".join(bad))
    return TlcwConfig(n=n, t_b=t_b, t_s=t_s, f=f)


class Tlcw:
    """Per-node state machine for the witnessing layer."""

    def __init__(self, ctx, node: int, config: TlcwConfig, tag: str = "w"):
        self.ctx = ctx
        self.node = node
        self.config = config
        self.tag = tag
        self.step = 0
        self._prev_r: frozenset[tuple[int, bytes]] = frozenset()
        self._prev_b: frozenset[tuple[int, bytes]] = frozenset()
        self._replay: list[StepMessage] = []

    def broadcast(self, m: bytes):
        cfg = self.config
        self.step += 1
        step = self.step
        cur_r: set[tuple[int, bytes]] = set()
        cur_b: set[tuple[int, bytes]] = set()
        acks: set[int] = set()
        wit_sent = False
        self.ctx.step_begin(self.tag)
        self.ctx.broadcast(self._msg(REQ, step, m))
        replay, self._replay = self._replay, []
        for msg in replay:
            if msg.step != step:
                raise TransportIntegrityError(
                    f"node {self.node}: replayed message for step {msg.step} at {step}"
                )
            wit_sent = self._on_current(msg, step, m, cur_r, cur_b, acks, wit_sent)
        while len(cur_b) < cfg.t_b:
            self.ctx.note_wait(self.tag, step, len(cur_b), cfg.t_b)
            msg = yield from self.ctx.receive(self.tag)
            if msg.step == step:
                wit_sent = self._on_current(msg, step, m, cur_r, cur_b, acks, wit_sent)
            elif msg.step < step:
                continue
            elif msg.step == step + 1:
                if msg.prior_r is None or msg.prior_b is None:
                    raise TransportIntegrityError(
                        f"node {self.node}: future message without piggyback"
                    )
                cur_r |= msg.prior_r
                cur_b |= msg.prior_b
                self._replay.append(msg)
            else:
                raise TransportIntegrityError(
                    f"node {self.node}: step {msg.step} message while in {step}"
                )
        self._prev_r = frozenset(cur_r)
        self._prev_b = frozenset(cur_b)
        return TsbResult(r=self._prev_r, b=self._prev_b)

    def _msg(self, kind: str, step: int, payload: bytes) -> StepMessage:
        return StepMessage(
            layer=self.tag,
            kind=kind,
            sender=self.node,
            step=step,
            payload=payload,
            prior_r=self._prev_r,
            prior_b=self._prev_b,
        )

    def _on_current(self, msg, step, m, cur_r, cur_b, acks, wit_sent) -> bool:
        if msg.kind == REQ:
            cur_r.add((msg.sender, msg.payload))
            self.ctx.unicast(msg.sender, self._msg(ACK, step, msg.payload))
        elif msg.kind == ACK:
            if msg.payload == m:
                acks.add(msg.sender)
                if len(acks) == self.config.t_s and not wit_sent:
                    wit_sent = True
                    self.ctx.broadcast(self._msg(WIT, step, m))
        elif msg.kind == WIT:
            cur_b.add((msg.sender, msg.payload))
        return wit_sent
