"""Write-once key-value stores and their line protocol.

A store maps byte keys to byte values where the first write of a key wins
forever: the fundamental call is write_read, which stores the offered value
only if the key is fresh and returns whatever the key holds afterwards.
Losing a race is not an error -- the caller learns the winning value, which
is exactly what an optimistic-concurrency client needs.

Two backends share the semantics: an in-memory dict, and an append-only log
file that doubles as a protocol transcript, so reopening a file store replays
its own wire format.  The protocol is line-oriented with base64 fields (the
empty byte string is spelled ``-``)::

    WR <key> <value>     -> V <value now at key>
    W  <key> <value>     -> A            (absorbed: this write won)
                            V <existing> (lost: key already written)
    R  <key>             -> V <value> or N

Stores are thread-safe; ``wait_read`` blocks until some writer commits the
key, so in-process pollers don't have to spin.
"""

from __future__ import annotations

import argparse
import base64
import sys
import threading
from typing import Iterable, Optional, TextIO


class ProtocolError(Exception):
    pass


def b64(data: bytes) -> str:
    return "-" if not data else base64.b64encode(data).decode("ascii")


def unb64(text: str) -> bytes:
    if text == "-":
        return b""
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise ProtocolError(f"bad base64 field {text!r}") from exc


def encode_request(verb: str, key: bytes, value: Optional[bytes] = None) -> str:
    if verb == "R":
        return f"R {b64(key)}\n"
    if verb in ("W", "WR"):
        if value is None:
            raise ProtocolError(f"{verb} needs a value")
        return f"{verb} {b64(key)} {b64(value)}\n"
    raise ProtocolError(f"unknown verb {verb!r}")


def parse_request(line: str) -> tuple[str, bytes, Optional[bytes]]:
    parts = line.split()
    if not parts:
        raise ProtocolError("empty request")
    verb = parts[0]
    if verb == "R" and len(parts) == 2:
        return verb, unb64(parts[1]), None
    if verb in ("W", "WR") and len(parts) == 3:
        return verb, unb64(parts[1]), unb64(parts[2])
    raise ProtocolError(f"malformed request {line!r}")


def encode_hit(value: bytes) -> str:
    return f"V {b64(value)}\n"


class _Store:
    """Shared write-once machinery; subclasses supply the commit action."""

    def __init__(self) -> None:
        self._data: dict[bytes, bytes] = {}
        self._lock = threading.Lock()
        self._cond = threading.Condition(self._lock)

    def _commit(self, key: bytes, value: bytes) -> None:
        self._data[key] = value

    def write_read(self, key: bytes, value: bytes) -> bytes:
        """Store value if the key is fresh; either way return the key's
        settled value."""
        with self._cond:
            if key not in self._data:
                self._commit(key, value)
                self._cond.notify_all()
            return self._data[key]

    def write(self, key: bytes, value: bytes) -> tuple[bool, bytes]:
        """Like write_read but also says whether this call won the key."""
        with self._cond:
            if key not in self._data:
                self._commit(key, value)
                self._cond.notify_all()
                return True, value
            return False, self._data[key]

    def read(self, key: bytes) -> Optional[bytes]:
        with self._lock:
            return self._data.get(key)

    def wait_read(self, key: bytes, timeout: Optional[float] = None) -> bytes:
        """Block until the key is written, then return its value."""
        with self._cond:
            if not self._cond.wait_for(lambda: key in self._data, timeout):
                raise TimeoutError(f"key never written: {key!r}")
            return self._data[key]

    def __len__(self) -> int:
        with self._lock:
            return len(self._data)

    def snapshot(self) -> dict[bytes, bytes]:
        with self._lock:
            return dict(self._data)

    def close(self) -> None:
        pass


class MemoryStore(_Store):
    """Write-once map living in the process."""


class FileStore(_Store):
    """Write-once map backed by an append-only log of ``W key value`` lines.

    Opening replays the log, so a store survives restarts; the log is valid
    input for the protocol server, which makes debugging a matter of cat.
    """

    def __init__(self, path: str):
        super().__init__()
        self.path = path
        try:
            with open(path, "r", encoding="ascii") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    verb, key, value = parse_request(line)
                    if verb != "W" or value is None:
                        raise ProtocolError(f"log holds a non-write line: {line!r}")
                    self._data.setdefault(key, value)
        except FileNotFoundError:
            pass
        self._fh = open(path, "a", encoding="ascii")

    def _commit(self, key: bytes, value: bytes) -> None:
        self._fh.write(encode_request("W", key, value))
        self._fh.flush()
        super()._commit(key, value)

    def close(self) -> None:
        with self._lock:
            self._fh.close()


def open_store(backend: str, path: Optional[str] = None) -> _Store:
    if backend == "memory":
        return MemoryStore()
    if backend == "file":
        if not path:
            raise ProtocolError("file backend needs --path")
        return FileStore(path)
    raise ProtocolError(f"unknown backend {backend!r}")


def serve(store: _Store, lines: Iterable[str], out: TextIO) -> None:
    """Run the request loop until input ends.  Malformed lines get an
    ``E reason`` response instead of killing the server."""
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            verb, key, value = parse_request(line)
            if verb == "R":
                got = store.read(key)
                out.write("N\n" if got is None else encode_hit(got))
            elif verb == "WR":
                out.write(encode_hit(store.write_read(key, value)))
            else:  # W
                won, settled = store.write(key, value)
                out.write("A\n" if won else encode_hit(settled))
        except ProtocolError as exc:
            out.write(f"E {exc}\n")
        out.flush()


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="qscod-store",
        description="Serve a write-once key-value store over the W/R/WR "
        "line protocol on stdin/stdout.",
    )
    parser.add_argument("--backend", choices=("memory", "file"), default="memory")
    parser.add_argument("--path", help="log file (file backend)")
    args = parser.parse_args(argv)
    try:
        store = open_store(args.backend, args.path)
    except (OSError, ValueError, ProtocolError) as exc:
        parser.exit(2, f"{parser.prog}: error: {exc}\n")
    try:
        serve(store, sys.stdin, sys.stdout)
    finally:
        store.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
