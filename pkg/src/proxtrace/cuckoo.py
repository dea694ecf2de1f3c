"""Cuckoo filter used to publish unlinkable-design entries.

Items are 32-byte digests, so the filter slices them instead of re-hashing:
bytes 0..8 select the primary bucket and bytes 8..16 give the fingerprint.
The alternate bucket is ``i1 ^ mix64(fingerprint)`` (partial-key cuckoo
hashing), which lets a bucket be recovered from the other bucket and the
stored fingerprint alone.

Wire format (big-endian)::

    magic "DP3TCF01" | version u16 | fingerprint_bits u8 | slots_per_bucket u8
    | bucket_count u32 | item_count u32 | packed fingerprints | sha256 digest

Fingerprints are bit-packed MSB-first, bucket-major and slot-minor, with zero
marking an empty slot.  The trailing digest covers every preceding byte.
"""

from __future__ import annotations

import hashlib
import math
import random
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"DP3TCF01"
VERSION = 1
HEADER = struct.Struct(">8sHBBII")
DIGEST_LEN = 32

DEFAULT_SLOTS = 4
DEFAULT_FINGERPRINT_BITS = 45
MAX_LOAD = 0.95
MAX_KICKS = 500
MAX_FINGERPRINT_BITS = 64

_M64 = (1 << 64) - 1


class FilterFullError(Exception):
    """Eviction chain exhausted; the filter was under-provisioned."""


class FilterFormatError(ValueError):
    pass


class UnreachableTarget(ValueError):
    pass


def mix64(x: int) -> int:
    # splitmix64 finalizer
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9 & _M64
    x = (x ^ (x >> 27)) * 0x94D049BB133111EB & _M64
    return x ^ (x >> 31)


def _mix64_np(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        x ^= x >> np.uint64(30)
        x *= np.uint64(0xBF58476D1CE4E5B9)
        x ^= x >> np.uint64(27)
        x *= np.uint64(0x94D049BB133111EB)
        x ^= x >> np.uint64(31)
    return x


def next_power_of_two(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def buckets_for(expected_items: int, slots_per_bucket: int = DEFAULT_SLOTS) -> int:
    """Smallest power-of-two bucket count holding expected_items at load <= 0.95."""
    needed = math.ceil(expected_items / (MAX_LOAD * slots_per_bucket))
    return next_power_of_two(max(needed, 1))


def fp_bound(fingerprint_bits: int, slots_per_bucket: int = DEFAULT_SLOTS) -> float:
    """Per-query false-positive upper bound 2b / 2^f."""
    return 2 * slots_per_bucket / 2.0**fingerprint_bits


@dataclass(frozen=True)
class FilterTuning:
    expected_items: int
    target_fp_per_user_over_horizon: float
    queries_per_user_over_horizon: int

    def __post_init__(self):
        if self.expected_items <= 0 or self.queries_per_user_over_horizon <= 0:
            raise ValueError("expected_items and queries must be positive")
        if not 0.0 < self.target_fp_per_user_over_horizon < 1.0:
            raise ValueError("target probability must lie in (0, 1)")


def default_query_volume(stored_observations=140_000, filters_per_day=12, days=365 * 5) -> int:
    """Lookups one user performs: every stored hash against every published filter."""
    return stored_observations * filters_per_day * days


def tune(t: FilterTuning, slots_per_bucket: int = DEFAULT_SLOTS) -> tuple[int, int, int]:
    """Return (fingerprint_bits, bucket_count, slots_per_bucket) meeting the FP budget."""
    for f in range(1, MAX_FINGERPRINT_BITS + 1):
        if fp_bound(f, slots_per_bucket) * t.queries_per_user_over_horizon <= t.target_fp_per_user_over_horizon:
            return f, buckets_for(t.expected_items, slots_per_bucket), slots_per_bucket
    raise UnreachableTarget(
        f"target {t.target_fp_per_user_over_horizon:g} needs more than {MAX_FINGERPRINT_BITS} fingerprint bits"
    )


class CuckooFilter:
    def __init__(
        self,
        bucket_count: int,
        fingerprint_bits: int = DEFAULT_FINGERPRINT_BITS,
        slots_per_bucket: int = DEFAULT_SLOTS,
        seed: int = 0,
    ):
        if bucket_count < 1 or bucket_count & (bucket_count - 1):
            raise ValueError("bucket_count must be a power of two")
        if not 1 <= fingerprint_bits <= MAX_FINGERPRINT_BITS:
            raise ValueError("fingerprint_bits must be in 1..64")
        if not 1 <= slots_per_bucket <= 255:
            raise ValueError("slots_per_bucket must be in 1..255")
        self.bucket_count = bucket_count
        self.fingerprint_bits = fingerprint_bits
        self.slots_per_bucket = slots_per_bucket
        self.item_count = 0
        self._slots = [0] * (bucket_count * slots_per_bucket)
        self._mask = bucket_count - 1
        # eviction victims are drawn from a seeded generator so equal inputs give equal bytes
        self._rng = random.Random(seed)
        self._array = None

    @classmethod
    def for_items(cls, expected_items: int, fingerprint_bits=DEFAULT_FINGERPRINT_BITS,
                  slots_per_bucket=DEFAULT_SLOTS, seed: int = 0) -> "CuckooFilter":
        return cls(buckets_for(expected_items, slots_per_bucket), fingerprint_bits, slots_per_bucket, seed)

    @property
    def capacity(self) -> int:
        return self.bucket_count * self.slots_per_bucket

    @property
    def load_factor(self) -> float:
        return self.item_count / self.capacity

    def _locate(self, item: bytes) -> tuple[int, int, int]:
        if len(item) < 16:
            raise ValueError("items must be at least 16 bytes")
        i1 = int.from_bytes(item[0:8], "big") & self._mask
        fp = int.from_bytes(item[8:16], "big") >> (64 - self.fingerprint_bits)
        if fp == 0:
            fp = 1
        return i1, i1 ^ (mix64(fp) & self._mask), fp

    def _bucket_has(self, bucket: int, fp: int) -> bool:
        b = self.slots_per_bucket
        return fp in self._slots[bucket * b : bucket * b + b]

    def _try_put(self, bucket: int, fp: int) -> bool:
        b = self.slots_per_bucket
        base = bucket * b
        for s in range(base, base + b):
            if self._slots[s] == 0:
                self._slots[s] = fp
                return True
        return False

    def insert(self, item: bytes) -> None:
        """Add an item; one that already tests present is not stored again.

        Without deletion a second copy of a fingerprint adds nothing, and
        skipping it keeps repeated inserts from overflowing two buckets.
        """
        i1, i2, fp = self._locate(item)
        if self._bucket_has(i1, fp) or self._bucket_has(i2, fp):
            return
        if self.item_count >= self.capacity:
            raise FilterFullError("filter at capacity")
        self._array = None
        if self._try_put(i1, fp) or self._try_put(i2, fp):
            self.item_count += 1
            return
        b = self.slots_per_bucket
        path = []
        bucket = self._rng.choice((i1, i2))
        for _ in range(MAX_KICKS):
            s = bucket * b + self._rng.randrange(b)
            path.append((s, self._slots[s]))
            fp, self._slots[s] = self._slots[s], fp
            bucket ^= mix64(fp) & self._mask
            if self._try_put(bucket, fp):
                self.item_count += 1
                return
        for s, old in reversed(path):
            self._slots[s] = old
        raise FilterFullError(f"eviction chain exceeded {MAX_KICKS} kicks")

    def contains(self, item: bytes) -> bool:
        i1, i2, fp = self._locate(item)
        return self._bucket_has(i1, fp) or self._bucket_has(i2, fp)

    __contains__ = contains

    def _table(self) -> np.ndarray:
        if self._array is None:
            self._array = np.array(self._slots, dtype=np.uint64).reshape(self.bucket_count, self.slots_per_bucket)
        return self._array

    def contains_many(self, index_words: np.ndarray, fp_words: np.ndarray) -> np.ndarray:
        """Vectorized lookup given the two big-endian u64 words of each item.

        ``index_words[j]`` and ``fp_words[j]`` are bytes 0..8 and 8..16 of item j.
        """
        mask = np.uint64(self._mask)
        i1 = index_words.astype(np.uint64) & mask
        fp = fp_words.astype(np.uint64) >> np.uint64(64 - self.fingerprint_bits)
        fp[fp == 0] = 1
        i2 = i1 ^ (_mix64_np(fp) & mask)
        table = self._table()
        hit = (table[i1.astype(np.intp)] == fp[:, None]).any(axis=1)
        hit |= (table[i2.astype(np.intp)] == fp[:, None]).any(axis=1)
        return hit

    def serialize(self) -> bytes:
        header = HEADER.pack(MAGIC, VERSION, self.fingerprint_bits, self.slots_per_bucket,
                             self.bucket_count, self.item_count)
        body = pack_bits(self._slots, self.fingerprint_bits)
        return header + body + hashlib.sha256(header + body).digest()

    @property
    def body_size(self) -> int:
        return body_len(self.capacity, self.fingerprint_bits)

    @classmethod
    def deserialize(cls, data: bytes) -> "CuckooFilter":
        if len(data) < HEADER.size + DIGEST_LEN:
            raise FilterFormatError("truncated filter")
        magic, version, f, b, buckets, items = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise FilterFormatError("bad magic")
        if version != VERSION:
            raise FilterFormatError(f"unsupported version {version}")
        if buckets < 1 or buckets & (buckets - 1):
            raise FilterFormatError("bucket_count is not a power of two")
        if not 1 <= f <= MAX_FINGERPRINT_BITS or b < 1:
            raise FilterFormatError("bad fingerprint width or slot count")
        n = body_len(buckets * b, f)
        if len(data) != HEADER.size + n + DIGEST_LEN:
            raise FilterFormatError("length does not match declared sizes")
        end = HEADER.size + n
        if hashlib.sha256(data[:end]).digest() != data[end:]:
            raise FilterFormatError("integrity digest mismatch")
        slots = unpack_bits(data[HEADER.size:end], f, buckets * b)
        if sum(1 for x in slots if x) != items:
            raise FilterFormatError("item_count does not match body")
        filt = cls(buckets, f, b)
        filt._slots = slots
        filt.item_count = items
        return filt


def body_len(slots: int, bits: int) -> int:
    return (slots * bits + 7) // 8


def pack_bits(values, bits: int) -> bytes:
    words = np.asarray(values, dtype=">u8").view(np.uint8).reshape(-1, 8)
    bitrows = np.unpackbits(words, axis=1)[:, 64 - bits :]
    return np.packbits(bitrows.ravel()).tobytes()


def unpack_bits(data: bytes, bits: int, count: int) -> list[int]:
    flat = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[: count * bits]
    rows = np.zeros((count, 64), dtype=np.uint8)
    rows[:, 64 - bits :] = flat.reshape(count, bits)
    return np.packbits(rows, axis=1).view(">u8").ravel().astype(np.uint64).tolist()
