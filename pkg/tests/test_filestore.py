import json
import random
import threading
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairio.filestore import (DEFAULT_STRIPE_SIZE, ExtentMap, FileStore, bytes_per_server, hash64,
                              metadata_query, place, read_range, stripe_chunks, write_range)

from oracles import FlatFile

# frozen from the keyed ring hash; a change here means placement changed for every user
GOLDEN_PLACEMENT = [
    (("/fs/a.dat", 4, 1), [0]),
    (("/fs/a.dat", 4, 2), [0, 2]),
    (("/fs/a.dat", 8, 1), [6]),
    (("/fs/a.dat", 8, 3), [6, 4, 0]),
    (("/fs/dir/b.bin", 2, 1), [0]),
]


@pytest.mark.parametrize("args, want", GOLDEN_PLACEMENT)
def test_golden_placement(args, want):
    assert place(*args) == want


def test_hash_is_stable():
    assert hash64("x") == hash64("x") and hash64("x") != hash64("y")


def test_place_repeatable_and_adjacent():
    assert place("/fs/p", 4) == place("/fs/p", 4)
    two = place("/fs/p", 4, 2)
    assert len(set(two)) == 2 and two[0] == place("/fs/p", 4)[0]
    assert place("/fs/p", 4, 4)[:2] == two


def test_place_errors():
    with pytest.raises(ValueError):
        place("/fs/p", 2, 3)
    with pytest.raises(ValueError):
        place("/fs/p", 2, 0)


def test_place_subset():
    for i in range(50):
        assert place(f"/fs/f{i}", 8, 1, servers=[3, 5])[0] in (3, 5)


def test_ring_balance_across_seeds():
    for seed in range(5):
        rng = random.Random(seed)
        c = Counter(place(f"/fs/{rng.getrandbits(64):016x}/f{i}", 8)[0] for i in range(10_000))
        mean = 10_000 / 8
        assert all(abs(c[s] - mean) <= 0.2 * mean for s in range(8)), c


# -- striping arithmetic

def test_stripe_chunks_raid0():
    chunks = list(stripe_chunks(2, 10, 5, 20))
    assert chunks == [(0, 5, 5, 5), (1, 0, 10, 10), (0, 10, 20, 5)]


def test_bytes_per_server():
    assert bytes_per_server([3, 1], 10, 5, 20) == {3: 10, 1: 10}
    assert bytes_per_server([0, 1, 2], 1_000_000, 0, 10_000_000) == {0: 4_000_000, 1: 3_000_000, 2: 3_000_000}


# -- extent map

def test_extent_overwrite_splits():
    e = ExtentMap()
    e.write(0, b"aaaaaaaaaa")
    e.write(3, b"bbb")
    assert e.read(0, 10) == b"aaabbbaaaa"
    assert [s for s, _ in e.extents()] == [0, 3, 6]
    assert e.end() == 10


# -- data path

@pytest.fixture
def store():
    s = FileStore(4)
    s.makedirs("/fs/d")
    s.create("/fs/d/f")
    return s


def test_roundtrip(store):
    assert write_range(store, "/fs/d/f", 0, b"0123456789") == 10
    assert read_range(store, "/fs/d/f", 0, 10) == b"0123456789"


def test_disjoint_writes(store):
    store.write_range("/fs/d/f", 0, b"abc")
    store.write_range("/fs/d/f", 10, b"xyz")
    assert store.read_range("/fs/d/f", 0, 3) == b"abc"
    assert store.read_range("/fs/d/f", 10, 3) == b"xyz"
    assert store.stat("/fs/d/f")["size"] == 13


def test_last_write_wins(store):
    store.write_range("/fs/d/f", 0, b"aaaa")
    store.write_range("/fs/d/f", 0, b"bbbb")
    assert store.read_range("/fs/d/f", 0, 4) == b"bbbb"


def test_hole_reads_zero(store):
    store.write_range("/fs/d/f", 8, b"x")
    assert store.read_range("/fs/d/f", 0, 8) == bytes(8)


def test_read_past_eof_truncated(store):
    store.write_range("/fs/d/f", 0, b"hello")
    assert store.read_range("/fs/d/f", 3, 100) == b"lo"
    assert store.read_range("/fs/d/f", 10, 5) == b""


def test_spanning_stripes_matches_flat():
    s = FileStore(4, stripe_size=8, stripe_count=3)
    s.create("/fs/big")
    flat = FlatFile()
    data = bytes(range(50))
    s.write_range("/fs/big", 3, data)
    flat.write(3, data)
    assert s.read_range("/fs/big", 0, 60) == flat.read(0, 60)
    meta = s.stat("/fs/big")
    assert meta["stripe_count"] == 3 and len(meta["server_ids"]) == 3


def test_data_path_errors(store):
    with pytest.raises(FileNotFoundError):
        store.write_range("/fs/d/missing", 0, b"x")
    with pytest.raises(FileNotFoundError):
        store.read_range("/fs/d/missing", 0, 1)
    with pytest.raises(IsADirectoryError):
        store.write_range("/fs/d", 0, b"x")
    with pytest.raises(ValueError):
        store.read_range("/fs/d/f", -1, 1)
    with pytest.raises(ValueError):
        store.normalize("/elsewhere/f")


# -- metadata

def test_readdir_sorted(store):
    store.create("/fs/d/b")
    store.create("/fs/d/a")
    assert metadata_query(store, "readdir", "/fs/d") == ["a", "b", "f"]


def test_stat_after_offset_write(store):
    store.write_range("/fs/d/f", 5, b"12345")
    st_ = metadata_query(store, "stat", "/fs/d/f")
    assert st_["size"] == 10 and st_["type"] == "file"
    assert store.stat("/fs/d")["type"] == "dir"


def test_metadata_errors(store):
    with pytest.raises(FileNotFoundError):
        metadata_query(store, "stat", "/fs/nope")
    with pytest.raises(FileNotFoundError):
        store.create("/fs/nodir/x")
    with pytest.raises(FileExistsError):
        store.create("/fs/d/f")
    with pytest.raises(NotADirectoryError):
        store.create("/fs/d/f/x")
    with pytest.raises(ValueError):
        metadata_query(store, "unlink", "/fs/d/f")
    assert store.create("/fs/d/f", exist_ok=True).path == "/fs/d/f"


def test_create_updates_parent(store):
    metadata_query(store, "create", "/fs/d/new")
    metadata_query(store, "mkdir", "/fs/d/sub")
    assert "new" in store.readdir("/fs/d") and "sub" in store.readdir("/fs/d")
    assert store.exists("/fs/d/sub") and not store.exists("/fs/d/gone")


def test_metadata_on_owner_server(store):
    path = "/fs/d/f"
    owner = place(path, 4)[0]
    assert path in store.nodes[owner].meta
    assert all(path not in n.meta for n in store.nodes if n.server_id != owner)


def test_reads_take_no_locks(store):
    store.write_range("/fs/d/f", 0, b"z" * 1000)
    before = store.lock_acquisitions()
    out = []

    def reader():
        for _ in range(50):
            out.append(store.read_range("/fs/d/f", 0, 1000))

    threads = [threading.Thread(target=reader) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert store.lock_acquisitions() == before
    assert len(out) == 200 and len(set(out)) == 1
    store.write_range("/fs/d/f", 0, b"y")
    assert store.lock_acquisitions() == before + 1


def test_manifest_roundtrip(store):
    store.write_range("/fs/d/f", 2, b"payload")
    store.create("/fs/top")
    doc = json.loads(json.dumps(store.dump_manifest()))
    again = FileStore.load_manifest(doc)
    assert again.dump_manifest() == doc
    assert again.read_range("/fs/d/f", 0, 9) == b"\0\0payload"
    with pytest.raises(ValueError):
        FileStore.load_manifest({**doc, "version": 2})


def test_store_rejects_bad_stripe_count():
    with pytest.raises(ValueError):
        FileStore(2, stripe_count=3)


def test_default_stripe_size_is_one_mb():
    assert DEFAULT_STRIPE_SIZE == 1_000_000


ops = st.lists(st.tuples(st.integers(0, 300), st.binary(min_size=0, max_size=120)), min_size=1, max_size=25)


@settings(max_examples=150, deadline=None)
@given(ops, st.integers(1, 4), st.integers(1, 40), st.integers(0, 400), st.integers(0, 200))
def test_striped_equals_flat(writes, count, stripe, roff, rlen):
    s = FileStore(4, stripe_size=stripe, stripe_count=count)
    s.create("/fs/x")
    flat = FlatFile()
    for off, data in writes:
        s.write_range("/fs/x", off, data)
        flat.write(off, data)
        assert s.stat("/fs/x")["size"] == flat.size
    assert s.read_range("/fs/x", 0, flat.size) == flat.read(0, flat.size)
    assert s.read_range("/fs/x", roff, rlen) == flat.read(roff, rlen)
