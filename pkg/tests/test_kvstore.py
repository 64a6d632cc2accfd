"""Write-once stores: first writer wins, restarts and races included."""

from __future__ import annotations

import io
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from quesera.kvstore import (
    FileStore,
    MemoryStore,
    ProtocolError,
    b64,
    encode_request,
    open_store,
    parse_request,
    serve,
    unb64,
)


@pytest.fixture(params=["memory", "file"])
def store(request, tmp_path):
    s = open_store(request.param, str(tmp_path / "log"))
    yield s
    s.close()


def test_first_write_settles_the_key(store):
    assert store.write_read(b"k", b"first") == b"first"
    assert store.write_read(b"k", b"second") == b"first"
    won, settled = store.write(b"k", b"third")
    assert (won, settled) == (False, b"first")
    assert store.write(b"fresh", b"x") == (True, b"x")
    assert store.read(b"k") == b"first"
    assert store.read(b"nope") is None
    assert len(store) == 2


def test_empty_bytes_are_legal_keys_and_values(store):
    assert store.write_read(b"", b"") == b""
    assert store.read(b"") == b""
    assert b64(b"") == "-" and unb64("-") == b""


def test_wait_read_blocks_until_the_write(store):
    got = []
    t = threading.Thread(target=lambda: got.append(store.wait_read(b"slow", 5)))
    t.start()
    store.write_read(b"slow", b"v")
    t.join(timeout=5)
    assert got == [b"v"]
    with pytest.raises(TimeoutError):
        store.wait_read(b"never", timeout=0.01)


def test_racing_writers_settle_on_one_value(store):
    """Heavy contention: every thread offers its own value for every key and
    all of them must agree on who won each."""
    writers, keys = 12, 60
    outcomes = [dict() for _ in range(writers)]

    def hammer(w):
        for k in range(keys):
            key = b"k%d" % k
            outcomes[w][key] = store.write_read(key, b"from-%d" % w)

    threads = [threading.Thread(target=hammer, args=(w,)) for w in range(writers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for w in range(1, writers):
        assert outcomes[w] == outcomes[0]
    assert store.snapshot() == outcomes[0]


def test_file_store_survives_restart(tmp_path):
    path = str(tmp_path / "wal")
    first = FileStore(path)
    first.write_read(b"a", b"1")
    first.write_read(b"b", b"")
    first.write_read(b"a", b"overwrite-attempt")
    first.close()

    again = FileStore(path)
    assert again.snapshot() == {b"a": b"1", b"b": b""}
    assert again.write_read(b"a", b"post-restart") == b"1"
    again.close()

    # the log itself speaks the wire protocol: one W line per settled key
    with open(path, encoding="ascii") as fh:
        lines = [ln.split()[0] for ln in fh if ln.strip()]
    assert lines == ["W", "W"]


@given(st.binary(max_size=64), st.binary(max_size=64))
def test_request_lines_round_trip(key, value):
    for verb in ("W", "WR"):
        assert parse_request(encode_request(verb, key, value)) == (verb, key, value)
    assert parse_request(encode_request("R", key)) == ("R", key, None)


def test_serve_speaks_the_protocol():
    feed = [
        encode_request("R", b"k"),
        encode_request("W", b"k", b"v1"),
        encode_request("W", b"k", b"v2"),
        encode_request("WR", b"k", b"v3"),
        encode_request("R", b"k"),
        "W onlyonefield\n",
        "HELLO\n",
        "W %s %s\n" % ("ab@!", "zz"),  # junk base64
        "\n",
    ]
    out = io.StringIO()
    serve(MemoryStore(), feed, out)
    v1 = b64(b"v1")
    assert out.getvalue().splitlines() == [
        "N", "A", f"V {v1}", f"V {v1}", f"V {v1}",
        "E malformed request 'W onlyonefield'",
        "E malformed request 'HELLO'",
        "E bad base64 field 'ab@!'",
    ]


def test_open_store_rejects_nonsense():
    with pytest.raises(ProtocolError, match="unknown backend"):
        open_store("redis")
    with pytest.raises(ProtocolError, match="needs --path"):
        open_store("file")
    with pytest.raises(ProtocolError, match="needs a value"):
        encode_request("W", b"k")
