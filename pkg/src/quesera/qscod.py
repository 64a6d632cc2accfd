"""Client-driven consensus over passive write-once key-value stores.

The stores do all the arbitration: every round uses four keys per store
(slots), and because keys are write-once, the first client to reach a store
fixes that store's canonical value for the slot -- everyone else's write
turns into a read of the winner.  A round therefore produces one canonical
value matrix (stores x slots) no matter how many clients race, and each
client just runs the lottery arithmetic over the columns it managed to
collect:

    slot 1  the client's fresh proposal            -> row R1 (one per store)
    slot 2  the client's collected R1 columns      -> gossip; tally gives B1
    slot 3  collected R1, B1 and the best of B1    -> row R2
    slot 4  the collected R2 columns               -> gossip; tally gives B2

The client adopts the best history visible in R2 and commits only when that
history is its own proposal, appears in B2, and was uniquely best in its R1
view -- the same rule the message-passing rounds use, restricted to the
client's own proposal because nobody else will retry a foreign message.

Each client drives its n stores from n dedicated threads so one slow or dead
store never stalls a round; progress needs any t_r columns.  Lost proposals
are retried after a randomized, exponentially growing number of back-off
rounds in which the client plays an empty proposal (it must keep proposing to
keep the lottery fair, but an empty win changes nothing).  Delivery is
at-least-once: a client that fails to observe its own win retries, so a
message can land in the chain twice; it can never be lost.
"""

from __future__ import annotations

import argparse
import queue
import struct
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .chain import GENESIS, ChainError, History, Proposal, best_in, uniquely_best_in
from .kvstore import MemoryStore, encode_hit, encode_request, open_store
from .netsim import mix64
from .tlcb import tlcb_check_config
from .tlcr import ConfigError
from .wire import (
    EntrySet,
    WireError,
    decode_entry_set,
    decode_history,
    encode_entry_set,
    encode_history,
    history_bytes,
)

_S_PRIORITY, _S_BACKOFF = 101, 102

WAIT_TIMEOUT = 60.0  # seconds; in-process stores answer in microseconds


def slot_key(rnd: int, slot: int) -> bytes:
    return struct.pack(">IB", rnd, slot)


def encode_slot3(r1: EntrySet, b1: EntrySet, best: History) -> bytes:
    return encode_entry_set(r1) + encode_entry_set(b1) + encode_history(best)


def decode_slot3(data: bytes) -> tuple[EntrySet, EntrySet, History]:
    r1, off = decode_entry_set(data, 0)
    b1, off = decode_entry_set(data, off)
    best, off = decode_history(data, off)
    if off != len(data):
        raise WireError("trailing bytes after slot value")
    return r1, b1, best


@dataclass(frozen=True)
class QscodParams:
    n: int
    t_r: int
    t_s: int
    t_b: int
    f: int


def qscod_params(
    n: int,
    f: Optional[int] = None,
    t_r: Optional[int] = None,
    t_s: Optional[int] = None,
    t_b: Optional[int] = None,
) -> QscodParams:
    """Thresholds over the store columns; same admission story as the gossip
    stack with full spread required (t_r + t_s > n), defaults to the
    n = 3f scheme."""
    f = n // 3 if f is None else f
    t_r = n - f if t_r is None else t_r
    t_s = min(n - f, f + 1) if t_s is None else t_s
    t_b = max(1, f) if t_b is None else t_b
    tlcb_check_config(n, t_r, t_s, t_b, f, require_full_spread=True)
    return QscodParams(n=n, t_r=t_r, t_s=t_s, t_b=t_b, f=f)


class CountingStore:
    """Store wrapper billing every operation at its line-protocol cost, so
    in-process measurements reflect what the wire would carry."""

    def __init__(self, inner, tally: "ByteTally"):
        self.inner = inner
        self.tally = tally

    def write_read(self, key: bytes, value: bytes) -> bytes:
        got = self.inner.write_read(key, value)
        self.tally.add(len(encode_request("WR", key, value)) + len(encode_hit(got)))
        return got

    def read(self, key: bytes):
        got = self.inner.read(key)
        self.tally.add(len(encode_request("R", key)) + (len(encode_hit(got)) if got is not None else 2))
        return got


class ByteTally:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.total = 0
        self.ops = 0

    def add(self, k: int) -> None:
        with self._lock:
            self.total += k
            self.ops += 1


class WaitCache:
    """Collects (key, column) -> value reports from the driver threads and
    lets the client block until enough columns answered for a key."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)
        self._got: dict[bytes, dict[int, bytes]] = {}

    def put(self, key: bytes, column: int, value: bytes) -> None:
        with self._cond:
            self._got.setdefault(key, {})[column] = value
            self._cond.notify_all()

    def wait(self, key: bytes, need: int, timeout: float = WAIT_TIMEOUT) -> dict[int, bytes]:
        with self._cond:
            ok = self._cond.wait_for(
                lambda: len(self._got.get(key, ())) >= need, timeout
            )
            if not ok:
                have = len(self._got.get(key, ()))
                raise TimeoutError(f"{have}/{need} columns answered for {key.hex()}")
            return dict(self._got[key])


class _Driver(threading.Thread):
    """One store's dedicated writer: performs write_read commands in order
    and reports winners to the cache.  A broken store kills only this column."""

    def __init__(self, column: int, store, cache: WaitCache):
        super().__init__(daemon=True)
        self.column = column
        self.store = store
        self.cache = cache
        self.commands: queue.Queue = queue.Queue()

    def submit(self, key: bytes, value: bytes) -> None:
        self.commands.put((key, value))

    def stop(self) -> None:
        self.commands.put(None)

    def run(self) -> None:
        while True:
            cmd = self.commands.get()
            if cmd is None:
                return
            key, value = cmd
            try:
                winner = self.store.write_read(key, value)
            except Exception:
                continue  # dead column; the client proceeds on the others
            self.cache.put(key, self.column, winner)


@dataclass
class RoundLog:
    """What one client saw and decided in one round (audit input)."""

    round: int
    message: bytes
    proposed: bytes  # digest of the client's proposal for the round
    adopted: bytes
    length: int
    committed: bool
    views: dict[int, dict[int, bytes]] = field(default_factory=dict)  # slot -> col -> value


@dataclass
class ClientReport:
    client: int
    rounds: int
    commits: int
    delivered: list[bytes] = field(default_factory=list)
    log: list[RoundLog] = field(default_factory=list)

    @property
    def history_digest(self) -> bytes:
        return self.log[-1].adopted if self.log else b""


class Client:
    """One consensus client; drives its stores until its workload lands."""

    def __init__(self, client_id: int, stores, params: QscodParams, seed: int):
        if len(stores) != params.n:
            raise ValueError("one store per column expected")
        self.id = client_id
        self.params = params
        self.seed = seed
        self.cache = WaitCache()
        self.drivers = [_Driver(i, s, self.cache) for i, s in enumerate(stores)]
        for d in self.drivers:
            d.start()
        self.history: History = GENESIS
        self.round = 0

    def close(self) -> None:
        for d in self.drivers:
            d.stop()

    # -- round machinery --

    def _step(self, slot: int, value: bytes) -> dict[int, bytes]:
        key = slot_key(self.round, slot)
        for d in self.drivers:
            d.submit(key, value)
        return self.cache.wait(key, self.params.t_r)

    @staticmethod
    def _tally(columns: dict[int, bytes], t_s: int) -> tuple[set, set]:
        """Union and >= t_s tally of gossiped entry sets."""
        union: set = set()
        hits: Counter = Counter()
        for payload in columns.values():
            entries, off = decode_entry_set(payload, 0)
            union |= entries
            hits.update(entries)
        return union, {e for e, k in hits.items() if k >= t_s}

    def run_round(self, message: bytes, priority: int) -> RoundLog:
        self.round += 1
        p = self.params
        proposal = Proposal(
            proposer=0, message=message, priority=priority, prev=self.history.digest
        )
        mine = self.history.extend(proposal)

        cols1 = self._step(1, encode_history(mine))
        r1 = frozenset((col, payload) for col, payload in cols1.items())
        cols2 = self._step(2, encode_entry_set(r1))
        gossip1, b1 = self._tally(cols2, p.t_s)
        r1_full = set(r1) | gossip1
        confirmed = [history_bytes(payload) for _, payload in b1]
        h2 = best_in(confirmed)

        cols3 = self._step(3, encode_slot3(frozenset(r1_full), frozenset(b1), h2))
        r2 = frozenset(
            (col, encode_history(decode_slot3(payload)[2])) for col, payload in cols3.items()
        )
        cols4 = self._step(4, encode_entry_set(r2))
        gossip2, b2 = self._tally(cols4, p.t_s)
        r2_full = set(r2) | gossip2

        chosen = best_in([history_bytes(x) for _, x in r2_full])
        committed = (
            chosen.digest == mine.digest
            and any(history_bytes(x).digest == chosen.digest for _, x in b2)
            and uniquely_best_in(chosen, [history_bytes(x) for _, x in r1_full])
        )
        self.history = chosen
        return RoundLog(
            round=self.round,
            message=message,
            proposed=mine.digest,
            adopted=chosen.digest,
            length=chosen.length,
            committed=committed,
            views={1: cols1, 2: cols2, 3: cols3, 4: cols4},
        )

    def run(self, messages: Iterable[bytes], max_rounds: int) -> ClientReport:
        """Push a workload through, retrying lost proposals with randomized
        exponential back-off, until delivered or out of rounds."""
        report = ClientReport(client=self.id, rounds=0, commits=0)
        pending = list(messages)
        pending.reverse()  # pop from the end
        current = pending.pop() if pending else None
        backoff = 0
        attempts = 0
        while report.rounds < max_rounds:
            if current is None and not pending:
                break
            rnd = self.round + 1
            message = current if backoff == 0 and current is not None else b""
            priority = mix64(self.seed, _S_PRIORITY, self.id, rnd)
            entry = self.run_round(message, priority)
            report.rounds += 1
            report.log.append(entry)
            if entry.committed:
                report.commits += 1
            if backoff > 0:
                backoff -= 1
                continue
            if current is None:
                continue
            if entry.committed and entry.adopted == entry.proposed:
                report.delivered.append(current)
                current = pending.pop() if pending else None
                attempts = 0
            else:
                attempts += 1
                window = 1 << min(attempts, 6)
                backoff = 1 + mix64(self.seed, _S_BACKOFF, self.id, rnd) % window
        return report


# --- audit ------------------------------------------------------------------


def audit(stores, params: QscodParams, reports: Iterable[ClientReport]) -> list[str]:
    """Replay the decision arithmetic of every logged round against the
    canonical store contents.  Deterministic given the final stores; returns
    violation strings (empty list = clean).

    Checks per round log: collected columns match the stores exactly and meet
    t_r, the tallies and adoption recompute to the logged values, and the
    commit rule held.  Across clients: all committed histories lie on one
    chain, checked by walking prev digests through the proposals the stores
    themselves hold.
    """
    bad: list[str] = []
    bodies: dict[bytes, Proposal] = {}

    def learn(payload: bytes) -> None:
        h = history_bytes(payload)
        if h.head is not None:
            bodies[h.digest] = h.head

    canon: dict[tuple[int, int, int], bytes] = {}
    for col, store in enumerate(stores):
        for key, value in store.snapshot().items():
            rnd, slot = struct.unpack(">IB", key)
            canon[(rnd, slot, col)] = value
            if slot == 1:
                learn(value)
            elif slot == 3:
                learn(encode_history(decode_slot3(value)[2]))

    for report in reports:
        for entry in report.log:
            tag = f"client {report.client} round {entry.round}"
            for slot, cols in entry.views.items():
                if len(cols) < params.t_r:
                    bad.append(f"{tag}: slot {slot} proceeded on {len(cols)} columns")
                for col, value in cols.items():
                    want = canon.get((entry.round, slot, col))
                    if want != value:
                        bad.append(f"{tag}: slot {slot} column {col} disagrees with store")
            # recompute the decision from the logged views; logs are evidence
            # from an untrusted party, so garbage is a finding, not a crash
            try:
                r1 = frozenset((c, v) for c, v in entry.views[1].items())
                gossip1, b1 = Client._tally(entry.views[2], params.t_s)
                r1_full = set(r1) | gossip1
                r2 = frozenset(
                    (c, encode_history(decode_slot3(v)[2]))
                    for c, v in entry.views[3].items()
                )
                gossip2, b2 = Client._tally(entry.views[4], params.t_s)
                chosen = best_in([history_bytes(x) for _, x in set(r2) | gossip2])
                should_commit = (
                    chosen.digest == entry.proposed
                    and any(history_bytes(x).digest == chosen.digest for _, x in b2)
                    and uniquely_best_in(chosen, [history_bytes(x) for _, x in r1_full])
                )
            except (WireError, ChainError, KeyError, struct.error) as exc:
                bad.append(f"{tag}: views do not replay ({exc})")
                continue
            if chosen.digest != entry.adopted:
                bad.append(f"{tag}: adopted {entry.adopted.hex()[:12]} but views say "
                           f"{chosen.digest.hex()[:12]}")
            if should_commit != entry.committed:
                bad.append(f"{tag}: committed={entry.committed} but views say {should_commit}")

    by_len: dict[int, bytes] = {}
    for report in reports:
        for entry in report.log:
            if not entry.committed:
                continue
            seen = by_len.get(entry.length)
            if seen is not None and seen != entry.adopted:
                bad.append(f"two committed histories at length {entry.length}")
            by_len.setdefault(entry.length, entry.adopted)
    lengths = sorted(by_len)
    for shorter, longer in zip(lengths, lengths[1:]):
        d = by_len[longer]
        for _ in range(longer - shorter):
            body = bodies.get(d)
            if body is None:
                bad.append(f"commit at length {longer}: ancestry leaves the stores")
                break
            d = body.prev
        else:
            if d != by_len[shorter]:
                bad.append(
                    f"commit at length {shorter} not a prefix of the one at {longer}"
                )
    return bad


# --- command line ------------------------------------------------------------


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="qscod",
        description="Run contending consensus clients against write-once stores "
        "and report deliveries, commits and protocol bytes.",
    )
    parser.add_argument("--stores", type=int, default=3, help="store count n")
    parser.add_argument("--clients", type=int, default=2)
    parser.add_argument("--messages", type=int, default=4, help="workload per client")
    parser.add_argument("--rounds", type=int, default=200, help="round budget per client")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--backend", choices=("memory", "file"), default="memory")
    parser.add_argument(
        "--path-template",
        default="qscod-store-{i}.log",
        help="file backend path per store, '{i}' expands to the column",
    )
    args = parser.parse_args(argv)

    try:
        params = qscod_params(args.stores)
    except ConfigError as exc:
        parser.exit(2, f"{parser.prog}: error: {exc}\n")
    tally = ByteTally()
    if args.backend == "memory":
        raw = [MemoryStore() for _ in range(args.stores)]
    else:
        try:
            raw = [
                open_store("file", args.path_template.format(i=i))
                for i in range(args.stores)
            ]
        except OSError as exc:
            parser.exit(2, f"{parser.prog}: error: {exc}\n")
    stores = [CountingStore(s, tally) for s in raw]

    def workload(cid: int) -> list[bytes]:
        return [b"c%d-m%d" % (cid, k) for k in range(args.messages)]

    clients = [
        Client(cid, stores, params, mix64(args.seed, cid)) for cid in range(args.clients)
    ]
    reports: list[Optional[ClientReport]] = [None] * args.clients

    def drive(cid: int) -> None:
        reports[cid] = clients[cid].run(workload(cid), args.rounds)

    threads = [threading.Thread(target=drive, args=(cid,)) for cid in range(args.clients)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for c in clients:
        c.close()

    done: list[ClientReport] = [r for r in reports if r is not None]
    problems = audit(raw, params, done)
    delivered_all = 0
    for report in sorted(done, key=lambda r: r.client):
        delivered_all += len(report.delivered)
        print(
            f"client={report.client} rounds={report.rounds} commits={report.commits} "
            f"delivered={len(report.delivered)}"
        )
    agreements = max(1, sum(r.commits for r in done))
    print(
        f"total stores={args.stores} clients={args.clients} delivered={delivered_all} "
        f"bytes={tally.total} bytes_per_agreement={tally.total // agreements} "
        f"audit={'ok' if not problems else 'FAIL'}"
    )
    for p in problems:
        print(f"audit: {p}")
    for s in raw:
        s.close()
    return 0 if not problems else 1


if __name__ == "__main__":
    raise SystemExit(main())
