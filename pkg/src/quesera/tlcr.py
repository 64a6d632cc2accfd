"""Receive-threshold step broadcast (the rotating receive-set layer).

Each call starts a fresh logical step: broadcast the caller's message together
with the just-completed previous receive set, then collect same-step messages
until ``t_r`` distinct senders are in.  A message from one step ahead proves
the peer completed the current step, so its piggybacked set is adopted
wholesale (viral catch-up) and the call completes immediately; the triggering
message itself is replayed at the start of its own step so it still counts
there (otherwise a trailing node could starve on the last step of a run, one
consumed message short of its threshold).  Messages for already-finished
steps are dropped silently — per-step messages are worthless once the step
is over.

The layer talks to a node context supplying the transport::

    ctx.step_begin(tag)            account one wire-level step
    ctx.broadcast(msg)             fan a StepMessage out to all n nodes
    ctx.unicast(dest, msg)         send to one node
    ctx.receive(tag)               generator: next StepMessage on this lane
    ctx.note_wait(tag, step, have, need)   progress report for stall diagnosis

``broadcast`` is a generator so a whole protocol stack runs as one coroutine
per node under the deterministic scheduler.
"""

from __future__ import annotations

from dataclasses import dataclass

from .tsb import TsbParams, TsbResult
from .wire import PLAIN, StepMessage


class ConfigError(ValueError):
    """A threshold configuration violates its admission inequalities."""


class TransportIntegrityError(Exception):
    """The transport broke a promise (FIFO gap, malformed piggyback)."""


@dataclass(frozen=True, slots=True)
class TlcrConfig:
    n: int
    t_r: int
    f: int = 0
    defer_future: bool = False

    @property
    def claim(self) -> TsbParams:
        return TsbParams(self.n, self.t_r, 0, 0)


def tlcr_configure(n: int, t_r: int, f: int = 0, defer_future: bool = False) -> TlcrConfig:
    """Validate the receive-threshold admission: 0 <= t_r <= n and enough
    live nodes to meet it (f <= n - t_r)."""
    bad = []
    if not 0 <= t_r <= n:
        bad.append(f"0 <= t_r <= n violated (t_r={t_r}, n={n})")
    if not 0 <= f <= n - t_r:
        bad.append(f"f <= n - t_r violated (f={f}, n={n}, t_r={t_r})")
    if bad:
        raise ConfigError("; ".join(bad))
    return TlcrConfig(n=n, t_r=t_r, f=f, defer_future=defer_future)


class Tlcr:
    """Per-node state machine for the receive-threshold layer."""

    def __init__(self, ctx, node: int, config: TlcrConfig, tag: str = "r"):
        self.ctx = ctx
        self.node = node
        self.config = config
        self.tag = tag
        self.step = 0
        self._prev: frozenset[tuple[int, bytes]] = frozenset()
        self._deferred: dict[int, list[StepMessage]] = {}
        self._replay: list[StepMessage] = []

    def broadcast(self, m: bytes):
        """One step: send ``m``, gather t_r same-step messages, return (R, {})."""
        cfg = self.config
        self.step += 1
        step = self.step
        cur: set[tuple[int, bytes]] = set()
        self.ctx.step_begin(self.tag)
        self.ctx.broadcast(
            StepMessage(
                layer=self.tag,
                kind=PLAIN,
                sender=self.node,
                step=step,
                payload=m,
                prior_r=None if cfg.defer_future else self._prev,
            )
        )
        replay, self._replay = self._replay, []
        for msg in (*self._deferred.pop(step, ()), *replay):
            if msg.step != step:
                raise TransportIntegrityError(
                    f"node {self.node}: replayed message for step {msg.step} at {step}"
                )
            cur.add((msg.sender, msg.payload))
        while len(cur) < cfg.t_r:
            self.ctx.note_wait(self.tag, step, len(cur), cfg.t_r)
            msg = yield from self.ctx.receive(self.tag)
            if msg.step == step:
                cur.add((msg.sender, msg.payload))
            elif msg.step < step:
                continue  # stale: its step is over, the message is lost
            elif cfg.defer_future:
                self._deferred.setdefault(msg.step, []).append(msg)
            elif msg.step == step + 1:
                if msg.prior_r is None:
                    raise TransportIntegrityError(
                        f"node {self.node}: future message without piggyback"
                    )
                cur |= msg.prior_r  # peer finished this step; adopt its set
                self._replay.append(msg)  # and count its message at its own step
            else:
                raise TransportIntegrityError(
                    f"node {self.node}: step {msg.step} message while in {step}"
                )
        self._prev = frozenset(cur)
        return TsbResult(r=self._prev, b=frozenset())
