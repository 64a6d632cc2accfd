"""Deterministic asynchronous network simulator for the broadcast stacks.

Every node runs its whole protocol stack as one generator; the scheduler is a
single event heap of pending unicast deliveries.  Channels are reliable FIFO
with arbitrary (but schedule-determined) delays, so runs model a genuinely
asynchronous network: steps interleave, nodes fall behind and catch up
virally, and an adversarial delay policy can stall any subset of channels for
long stretches.  Everything -- delays, priorities, proposal payloads, crash
injection -- derives from the run seed through a keyed integer mixer, so a
(config, seed) pair replays to the byte regardless of process or hash
randomization.

Crash faults stop a node at a chosen wire step, either before it sends
anything ("before") or right after its step broadcast leaves ("after").
In-flight traffic is still drained at the end of a run, which is what lets
the validators check eventual delivery.
"""

from __future__ import annotations

import heapq
import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .qsc import DeliveryRecord, QscState, run_qsc_node
from .tlcb import Tlcb, tlcb_check_config
from .tlcf import Tlcf, tlcf_configure
from .tlcr import ConfigError, Tlcr, tlcr_configure
from .tlcw import Tlcw, tlcw_configure
from .tsb import ProposalInfo, RunTrace, TsbParams
from .wire import StepMessage, encode_step_message

LAYERS = ("tlcr", "tlcb", "tlcb-full", "tlcw", "tlcf", "qsc-tlcb", "qsc-tlcf")
DELAY_POLICIES = ("fixed", "random", "adversarial")
TRACE_LEVELS = ("full", "steps", "light")

_M64 = (1 << 64) - 1

# stream labels keeping the seed-derived substreams apart
_S_DELAY, _S_TAIL, _S_ADV, _S_PRIORITY, _S_MESSAGE, _S_PAYLOAD = range(1, 7)


def mix64(*parts: int) -> int:
    """Keyed 64-bit mixer (splitmix finalization over folded inputs).
    Deterministic across processes and platforms; used for every random-ish
    decision in a run so seeds replay exactly."""
    h = 0x6A09E667F3BCC909
    for p in parts:
        p &= _M64
        h = (h ^ p) & _M64
        h = (h + 0x9E3779B97F4A7C15) & _M64
        h ^= h >> 30
        h = (h * 0xBF58476D1CE4E5B9) & _M64
        h ^= h >> 27
        h = (h * 0x94D049BB133111EB) & _M64
        h ^= h >> 31
    return h


# --- delay policies -------------------------------------------------------


class FixedDelay:
    """Every hop takes the same time: the synchronous best case."""

    name = "fixed"

    def __init__(self, seed: int, n: int, scale: int = 1):
        self.scale = max(1, scale)

    def delay(self, sender: int, dest: int, index: int) -> int:
        return self.scale


class RandomDelay:
    """Geometric-ish per-hop delays with a sparse heavy tail, so most traffic
    is quick but any channel occasionally lags several steps behind."""

    name = "random"

    def __init__(self, seed: int, n: int, scale: int = 4):
        self.seed = seed
        self.scale = max(1, scale)

    def delay(self, sender: int, dest: int, index: int) -> int:
        u = mix64(self.seed, _S_DELAY, sender, dest, index)
        run = 0
        while u & 1:  # trailing ones: P(run = k) = 2**-(k+1)
            run += 1
            u >>= 1
        d = 1 + run * self.scale
        if mix64(self.seed, _S_TAIL, sender, dest, index) % 64 == 0:
            d += self.scale * (8 + (u >> 3) % 56)
        return d


class AdversarialDelay:
    """Rotating targeted stalls: in each window a seed-picked victim subset
    has all its channels crawl (both directions) while everyone else is fast.
    Content-oblivious, but about as nasty as a delay-only adversary gets --
    quorums keep reshaping and laggards must rejoin virally."""

    name = "adversarial"

    def __init__(self, seed: int, n: int, scale: int = 4, period: int = 32):
        self.seed = seed
        self.n = n
        self.scale = max(1, scale)
        self.period = max(1, period)
        self.victims = max(1, n // 3)
        self._windows: dict[int, frozenset[int]] = {}

    def _victim_set(self, window: int) -> frozenset[int]:
        got = self._windows.get(window)
        if got is None:
            got = frozenset(
                mix64(self.seed, _S_ADV, window, k) % self.n
                for k in range(self.victims)
            )
            self._windows[window] = got
        return got

    def delay(self, sender: int, dest: int, index: int) -> int:
        victims = self._victim_set(index // self.period)
        if sender in victims or dest in victims:
            jitter = mix64(self.seed, _S_DELAY, sender, dest, index) % self.scale
            return self.scale * 40 + jitter
        return 1


def make_delay_policy(name: str, seed: int, n: int, scale: int = 4):
    table = {"fixed": FixedDelay, "random": RandomDelay, "adversarial": AdversarialDelay}
    if name not in table:
        raise ConfigError(f"unknown delay policy {name!r} (choose from {DELAY_POLICIES})")
    return table[name](seed, n, scale)


# --- run configuration ----------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """One reproducible run: a layer stack, a network, and a workload.

    ``rounds`` counts broadcast calls for bare layers and consensus rounds
    for the qsc-* stacks.  Unset thresholds fall back to the standard scheme
    for the given n and f (receive quorum n-f; witnessed stacks at f+1 spread).
    ``crashes`` holds (node, wire-step, phase) triples, phase "before" or
    "after" the step's send.
    """

    layer: str
    n: int
    seed: int
    rounds: int
    f: int = 0
    t_r: Optional[int] = None
    t_b: Optional[int] = None
    t_s: Optional[int] = None
    delay: str = "random"
    delay_scale: int = 4
    crashes: tuple[tuple[int, int, str], ...] = ()
    defer_future: bool = False
    trace_level: str = "full"

    def __post_init__(self) -> None:
        if self.layer not in LAYERS:
            raise ConfigError(f"unknown layer {self.layer!r} (choose from {LAYERS})")
        if self.trace_level not in TRACE_LEVELS:
            raise ConfigError(f"unknown trace level {self.trace_level!r}")
        if self.n < 1 or self.rounds < 0 or self.f < 0:
            raise ConfigError("n must be >= 1, rounds and f >= 0")
        for node, step, phase in self.crashes:
            if not 0 <= node < self.n:
                raise ConfigError(f"crash node {node} out of range")
            if step < 1 or phase not in ("before", "after"):
                raise ConfigError(f"bad crash spec ({node}, {step}, {phase})")

    @property
    def is_consensus(self) -> bool:
        return self.layer.startswith("qsc-")


@dataclass(frozen=True)
class Metrics:
    """Stable per-run summary; `line()` is the byte-stable rendering."""

    layer: str
    n: int
    f: int
    seed: int
    rounds: int
    commits: int
    unicasts: int
    bytes: int

    def line(self) -> str:
        return (
            f"seed={self.seed} n={self.n} f={self.f} layer={self.layer} "
            f"rounds={self.rounds} commits={self.commits} "
            f"unicasts={self.unicasts} bytes={self.bytes}"
        )


@dataclass
class SimResult:
    config: SimConfig
    trace: RunTrace
    metrics: Metrics
    results: dict[int, object] = field(default_factory=dict)


class DeadlockError(Exception):
    """No runnable node and no traffic in flight, but nodes still waiting."""


class NodeCrashed(Exception):
    """Raised inside a node's stack when its scheduled crash fires; the
    message is the phase."""


def resolve_thresholds(cfg: SimConfig) -> tuple[int, int, int]:
    """(t_r, t_b, t_s) after defaults.  Witnessed stacks (tlcw/tlcf) default
    to full quorums of n - f everywhere; gossip stacks (tlcb) default to a
    receive quorum of n - f, confirmation threshold f (floor 1), and spread
    mark f + 1 -- the standard n = 3f arrangement."""
    n, f = cfg.n, cfg.f
    t_r = cfg.t_r if cfg.t_r is not None else n - f
    if cfg.layer in ("tlcw", "tlcf", "qsc-tlcf"):
        t_b = cfg.t_b if cfg.t_b is not None else n - f
        t_s = cfg.t_s if cfg.t_s is not None else n - f
    else:
        t_b = cfg.t_b if cfg.t_b is not None else max(1, f)
        t_s = cfg.t_s if cfg.t_s is not None else min(n - f, f + 1)
    return t_r, t_b, t_s


def stack_claims(cfg: SimConfig) -> dict[str, TsbParams]:
    """Recorded layer names -> claimed thresholds, top of the stack first.
    Also validates the configuration (raises ConfigError)."""
    t_r, t_b, t_s = resolve_thresholds(cfg)
    n, f = cfg.n, cfg.f
    if cfg.layer == "tlcr":
        c = tlcr_configure(n, t_r, f, cfg.defer_future)
        return {"tlcr": c.claim}
    if cfg.layer in ("tlcb", "tlcb-full", "qsc-tlcb"):
        c = tlcb_check_config(
            n, t_r, t_s, t_b, f,
            require_full_spread=cfg.layer != "tlcb",
            defer_future=cfg.defer_future,
        )
        return {"tlcb": c.claim, "tlcr": c.inner.claim}
    if cfg.layer == "tlcw":
        c = tlcw_configure(n, t_b, t_s, f)
        return {"tlcw": c.claim}
    # tlcf, qsc-tlcf
    c = tlcf_configure(n, t_r, t_b, t_s, f)
    return {"tlcf": c.claim, "tlcw": c.witness.claim, "tlcr": c.gossip.claim}


# --- the simulator --------------------------------------------------------


class _NodeCtx:
    """Per-node transport endpoint handed to the protocol stack."""

    __slots__ = ("sim", "node", "inbox", "steps", "crash", "armed", "waiting")

    def __init__(self, sim: "Simulator", node: int, crash: Optional[tuple[int, str]]):
        self.sim = sim
        self.node = node
        self.inbox: dict[str, deque] = {}
        self.steps = 0  # wire-level steps begun (all lanes together)
        self.crash = crash
        self.armed = False
        self.waiting: Optional[tuple[str, int, int, int]] = None

    def step_begin(self, tag: str) -> None:
        self.steps += 1
        if self.crash is not None and self.crash[0] == self.steps:
            if self.crash[1] == "before":
                raise NodeCrashed("before")
            self.armed = True

    def broadcast(self, msg: StepMessage) -> None:
        frame = encode_step_message(msg)
        for dest in range(self.sim.n):
            self.sim.xmit(self.node, dest, msg, len(frame))
        if self.armed:
            raise NodeCrashed("after")

    def unicast(self, dest: int, msg: StepMessage) -> None:
        self.sim.xmit(self.node, dest, msg, len(encode_step_message(msg)))

    def receive(self, tag: str):
        while True:
            lane = self.inbox.get(tag)
            if lane:
                return lane.popleft()
            yield  # block until the scheduler delivers something

    def note_wait(self, tag: str, step: int, have: int, need: int) -> None:
        self.waiting = (tag, step, have, need)

    def deliver(self, msg: StepMessage) -> None:
        self.inbox.setdefault(msg.layer, deque()).append(msg)


class _Recorder:
    """Wraps one layer of one node's stack to write send/return trace records.
    ``completed`` counts this layer's finished broadcast calls and doubles as
    the step clock the consensus observer reads."""

    __slots__ = ("sim", "name", "node", "inner", "completed")

    def __init__(self, sim: "Simulator", name: str, node: int, inner):
        self.sim = sim
        self.name = name
        self.node = node
        self.inner = inner
        self.completed = 0

    def broadcast(self, m: bytes):
        self.sim.rec_send(self.name, self.completed + 1, self.node, m)
        res = yield from self.inner.broadcast(m)
        self.completed += 1
        self.sim.rec_ret(self.name, self.completed, self.node, res)
        return res


_RUNNABLE, _BLOCKED, _DONE, _CRASHED = range(4)


class Simulator:
    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.n = cfg.n
        self.seed = cfg.seed
        self.policy = make_delay_policy(cfg.delay, cfg.seed, cfg.n, cfg.delay_scale)
        self.trace = RunTrace(n=cfg.n, layers=stack_claims(cfg))
        self.level = cfg.trace_level
        self.now = 0
        self.order = 0
        self.unicasts = 0
        self.bytes = 0
        self.commits = 0
        self._eseq = 0
        self._heap: list = []
        self._chan_seq: dict[tuple[int, int], int] = {}
        self._chan_last: dict[tuple[int, int], int] = {}
        crash_plan = {node: (step, phase) for node, step, phase in cfg.crashes}
        self.ctxs = [_NodeCtx(self, i, crash_plan.get(i)) for i in range(cfg.n)]
        self.results: dict[int, object] = {}

    # -- recording --

    def next_order(self) -> int:
        self.order += 1
        return self.order

    def rec_send(self, name: str, step: int, node: int, payload: bytes) -> None:
        if self.level != "light":
            self.trace.sends.append(
                (self.next_order(), name, step, node, hashlib.sha256(payload).digest())
            )

    def rec_ret(self, name: str, step: int, node: int, res) -> None:
        if self.level != "light":
            r = tuple(sorted((s, hashlib.sha256(p).digest()) for s, p in res.r))
            b = tuple(sorted((s, hashlib.sha256(p).digest()) for s, p in res.b))
            self.trace.rets.append((self.next_order(), name, step, node, r, b))

    # -- transport --

    def xmit(self, sender: int, dest: int, msg: StepMessage, size: int) -> None:
        chan = (sender, dest)
        seq = self._chan_seq.get(chan, 0) + 1
        self._chan_seq[chan] = seq
        arrival = max(self.now + self.policy.delay(sender, dest, seq),
                      self._chan_last.get(chan, 0) + 1)
        self._chan_last[chan] = arrival
        self._eseq += 1
        heapq.heappush(self._heap, (arrival, self._eseq, sender, dest, seq, msg))
        self.unicasts += 1
        self.bytes += size
        if self.level == "full":
            self.trace.xmits.append((self.next_order(), sender, dest, seq, size))

    # -- stacks and workloads --

    def _build_stack(self, node: int):
        cfg = self.cfg
        ctx = self.ctxs[node]
        t_r, t_b, t_s = resolve_thresholds(cfg)
        if cfg.layer == "tlcr":
            c = tlcr_configure(cfg.n, t_r, cfg.f, cfg.defer_future)
            return _Recorder(self, "tlcr", node, Tlcr(ctx, node, c))
        if cfg.layer in ("tlcb", "tlcb-full", "qsc-tlcb"):
            c = tlcb_check_config(
                cfg.n, t_r, t_s, t_b, cfg.f,
                require_full_spread=cfg.layer != "tlcb",
                defer_future=cfg.defer_future,
            )
            raw = Tlcb(ctx, node, c)
            raw.inner = _Recorder(self, "tlcr", node, raw.inner)
            return _Recorder(self, "tlcb", node, raw)
        if cfg.layer == "tlcw":
            c = tlcw_configure(cfg.n, t_b, t_s, cfg.f)
            return _Recorder(self, "tlcw", node, Tlcw(ctx, node, c))
        c = tlcf_configure(cfg.n, t_r, t_b, t_s, cfg.f)
        raw = Tlcf(ctx, node, c)
        raw.witness = _Recorder(self, "tlcw", node, raw.witness)
        raw.gossip = _Recorder(self, "tlcr", node, raw.gossip)
        return _Recorder(self, cfg.layer.removeprefix("qsc-"), node, raw)

    def _broadcast_program(self, node: int, top):
        for k in range(1, self.cfg.rounds + 1):
            payload = b"%d/%d/" % (node, k) + mix64(
                self.seed, _S_PAYLOAD, node, k
            ).to_bytes(8, "big")
            yield from top.broadcast(payload)
        return None

    def _consensus_program(self, node: int, top):
        state = QscState(node=node)

        def choose(st: QscState) -> tuple[bytes, int]:
            rnd = st.round + 1
            message = mix64(self.seed, _S_MESSAGE, node, rnd).to_bytes(8, "big")
            priority = mix64(self.seed, _S_PRIORITY, node, rnd)
            return message, priority

        def on_propose(rnd: int, hist) -> None:
            self.trace.proposals[hist.digest] = ProposalInfo(
                digest=hist.digest,
                prev=hist.head.prev,
                node=node,
                round=rnd,
                created_step=top.completed,
                priority=hist.head.priority,
                length=hist.length,
            )

        def on_decide(rnd: int, hist, committed: bool) -> None:
            self.trace.adopts.append((self.next_order(), node, rnd, hist.digest))
            self.trace.deliveries.append(
                DeliveryRecord(
                    order=self.next_order(),
                    node=node,
                    round=rnd,
                    step=top.completed,
                    digest=hist.digest,
                    length=hist.length,
                    committed=committed,
                )
            )
            if committed:
                self.commits += 1

        yield from run_qsc_node(state, top, self.cfg.rounds, choose, on_propose, on_decide)
        return state

    # -- the scheduler --

    def run(self) -> SimResult:
        make = self._consensus_program if self.cfg.is_consensus else self._broadcast_program
        gens = [make(i, self._build_stack(i)) for i in range(self.n)]
        status = [_RUNNABLE] * self.n
        runq = deque(range(self.n))

        def advance(node: int) -> None:
            try:
                gens[node].send(None)
                status[node] = _BLOCKED
            except StopIteration as stop:
                status[node] = _DONE
                self.results[node] = stop.value
            except NodeCrashed as crashed:
                status[node] = _CRASHED
                self.trace.crashes[node] = (self.ctxs[node].steps, str(crashed))

        while True:
            while runq:
                advance(runq.popleft())
            if not self._heap:
                break
            when, _, sender, dest, seq, msg = heapq.heappop(self._heap)
            self.now = when
            if self.level == "full":
                self.trace.dlvrs.append((self.next_order(), sender, dest, seq))
            self.ctxs[dest].deliver(msg)
            if status[dest] == _BLOCKED:
                status[dest] = _RUNNABLE
                runq.append(dest)

        stuck = [i for i in range(self.n) if status[i] == _BLOCKED]
        if stuck:
            def describe(i: int) -> str:
                w = self.ctxs[i].waiting
                if w is None:
                    return f"node {i} blocked before its first step"
                tag, step, have, need = w
                return (f"node {i} stuck on lane {tag} step {step} with "
                        f"{have}/{need} senders (threshold unmeetable)")

            raise DeadlockError(
                "no traffic in flight but nodes waiting: "
                + "; ".join(describe(i) for i in stuck)
            )

        metrics = Metrics(
            layer=self.cfg.layer,
            n=self.n,
            f=self.cfg.f,
            seed=self.seed,
            rounds=self.cfg.rounds,
            commits=self.commits,
            unicasts=self.unicasts,
            bytes=self.bytes,
        )
        return SimResult(config=self.cfg, trace=self.trace, metrics=metrics, results=self.results)


def run(cfg: SimConfig) -> SimResult:
    """Build and run one simulation to completion (in-flight traffic drained)."""
    return Simulator(cfg).run()
