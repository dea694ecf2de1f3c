import hashlib
import os
import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from oracle import ref_ephids, ref_sha256
from proxtrace import crypto
from proxtrace.crypto import DaySeed, EpochParams, EpochSeed, WindowSeed

ZERO32 = bytes(32)
seeds32 = st.binary(min_size=32, max_size=32)
DIVISORS = [d for d in range(1, 1441) if 1440 % d == 0]


def test_rotate_zero_seed_matches_reference_hash():
    nxt = crypto.rotate_day_seed(DaySeed(ZERO32, 0))
    assert nxt.day == 1
    assert nxt.bytes == ref_sha256(ZERO32)
    assert nxt.bytes.hex() == "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925"


@given(seeds32, st.integers(0, 10**6))
def test_rotation_chain_composes(b, day):
    s = DaySeed(b, day)
    two = crypto.rotate_day_seed(crypto.rotate_day_seed(s))
    assert two == DaySeed(hashlib.sha256(hashlib.sha256(b).digest()).digest(), day + 2)
    chain = crypto.seed_chain(s, day + 5)
    assert [c.day for c in chain] == list(range(day, day + 6))
    assert chain[2] == two


def test_rotation_no_collisions_in_a_million():
    rng = random.Random(11)
    outs = {crypto.rotate_day_seed(DaySeed(rng.randbytes(32), 0)).bytes for _ in range(10**6)}
    assert len(outs) == 10**6


@pytest.mark.parametrize("L,n", [(15, 96), (1440, 1), (10, 144), (1, 1440)])
def test_day_ephid_count(L, n):
    eph = crypto.derive_day_ephids(DaySeed(ZERO32, 0), EpochParams(L, L))
    assert len(eph) == n and all(len(e) == 16 for e in eph)
    assert len(set(eph)) == n


def test_day_ephids_match_independent_keystream():
    seed = bytes(range(32))
    got = crypto.derive_day_ephids(DaySeed(seed, 3), EpochParams())
    assert got == ref_ephids(seed, b"broadcast key", 96)


@pytest.mark.parametrize("L", [7, 13, 0, -15, 1441])
def test_epoch_length_must_divide_day(L):
    with pytest.raises(ValueError):
        EpochParams(L, L * 4 if L > 0 else 60)


def test_window_must_be_multiple_of_epoch():
    with pytest.raises(ValueError):
        EpochParams(15, 250)
    with pytest.raises(ValueError):
        EpochParams(15, 1455)


@pytest.mark.parametrize("window,m", [(240, 16), (15, 1), (120, 8), (1440, 96)])
def test_window_ephid_count(window, m):
    eph = crypto.derive_window_ephids(WindowSeed(bytes(16), 0), EpochParams(15, window))
    assert len(eph) == m


def test_window_ephids_match_independent_keystream():
    seed = bytes(range(100, 116))
    got = crypto.derive_window_ephids(WindowSeed(seed, 9), EpochParams(15, 240))
    assert got == ref_ephids(seed, b"DP3T-HYBRID", 16)


def test_shuffle_single():
    assert crypto.shuffle_broadcast_order([b"x" * 16], random.Random(0)) == [b"x" * 16]


def test_shuffle_is_permutation():
    rng = random.Random(5)
    base = crypto.derive_day_ephids(DaySeed(ZERO32, 0), EpochParams())
    for _ in range(10**4):
        out = crypto.shuffle_broadcast_order(base, rng)
        assert sorted(out) == sorted(base)


def test_shuffle_position_uniform():
    rng = random.Random(6)
    items = [bytes([i]) * 16 for i in range(8)]
    counts = [0] * 8
    for _ in range(10**5):
        counts[crypto.shuffle_broadcast_order(items, rng).index(items[0])] += 1
    assert chisquare(counts).pvalue > 0.001


def test_unlinkable_ephid_zero_seed():
    assert crypto.derive_unlinkable_ephid(EpochSeed(ZERO32, 0)) == ref_sha256(ZERO32)[:16]


def test_unlinkable_ephid_no_collisions():
    rng = random.Random(12)
    outs = {crypto.derive_unlinkable_ephid(EpochSeed(rng.randbytes(32), 0)) for _ in range(10**6)}
    assert len(outs) == 10**6


@given(st.binary(min_size=16, max_size=16), st.integers(0, 2**32 - 2))
def test_hash_observation_layout(e, i):
    h = crypto.hash_observation(e, i)
    assert h == crypto.hash_observation(e, i)
    assert h == hashlib.sha256(e + struct.pack(">I", i)).digest()
    assert h != crypto.hash_observation(e, i + 1)


def test_hash_observation_reference():
    e = bytes(range(16))
    assert crypto.hash_observation(e, 1234) == ref_sha256(e + (1234).to_bytes(4, "big"))


def test_cuckoo_entry_is_composition():
    rng = random.Random(13)
    for _ in range(10**4):
        s = EpochSeed(rng.randbytes(32), rng.randrange(2**31))
        assert crypto.cuckoo_entry(s) == crypto.hash_observation(crypto.derive_unlinkable_ephid(s), s.epoch)


def test_cuckoo_entry_zero_seed_reference():
    expect = ref_sha256(ref_sha256(ZERO32)[:16] + bytes(4))
    assert crypto.cuckoo_entry(EpochSeed(ZERO32, 0)) == expect
    assert crypto.cuckoo_entry(EpochSeed(ZERO32, 1)) != expect


@pytest.mark.parametrize("cls,n", [(DaySeed, 32), (EpochSeed, 32), (WindowSeed, 16)])
def test_seed_length_and_index_checks(cls, n):
    cls(bytes(n), 0)
    with pytest.raises(ValueError):
        cls(bytes(n - 1), 0)
    with pytest.raises(ValueError):
        cls(bytes(n), -1)


@settings(max_examples=50)
@given(seeds32, st.integers(0, 20000), st.sampled_from(DIVISORS[:12]))
def test_regeneration_completeness(b, day, L):
    """Everything a device broadcasts during a day is derivable from that day's seed."""
    from proxtrace.device import Device
    from proxtrace.wire import Design

    p = EpochParams(L, L)
    dev = Device(Design.LOW_COST, p, rng=random.Random(day))
    dev.day_seeds[day] = DaySeed(b, day)
    sent = {dev.ephid_at(day * 86400 + k * p.epoch_seconds + 1) for k in range(p.epochs_per_day)}
    assert sent == set(crypto.derive_day_ephids(DaySeed(b, day), p))


def test_random_bytes_sources():
    assert len(crypto.random_bytes(None, 32)) == 32
    assert crypto.random_bytes(random.Random(1), 8) == crypto.random_bytes(random.Random(1), 8)
    assert os.urandom(1)  # OS entropy available for production paths
