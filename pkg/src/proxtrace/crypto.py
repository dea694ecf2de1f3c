"""Deterministic derivations shared by devices, backends and the simulator.

Hash is SHA-256, PRF is HMAC-SHA256 and the PRG is AES-128 in counter mode
(zero IV) keyed with the leftmost 16 bytes of the PRF output.  Interval
indices (epochs, windows) are counted from the Unix epoch in UTC and
serialized as 4-byte big-endian unsigned integers when hashed.
"""

from __future__ import annotations

import hashlib
import hmac
import random
import struct
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

EPHID_LEN = 16
DIGEST_LEN = 32
DAY_SEED_LEN = 32
EPOCH_SEED_LEN = 32
WINDOW_SEED_LEN = 16

MINUTES_PER_DAY = 24 * 60
SECONDS_PER_DAY = 86400

BROADCAST_KEY = b"broadcast key"
HYBRID_KEY = b"DP3T-HYBRID"

_ZERO_IV = bytes(16)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def prf(key: bytes, message: bytes) -> bytes:
    return hmac.new(key, message, hashlib.sha256).digest()


def prg(key: bytes, length: int) -> bytes:
    """AES-128-CTR keystream of `length` bytes (key truncated to 16 bytes)."""
    encryptor = Cipher(algorithms.AES(key[:16]), modes.CTR(_ZERO_IV)).encryptor()
    return encryptor.update(bytes(length)) + encryptor.finalize()


def _check_len(name, value, n):
    if not isinstance(value, (bytes, bytearray)) or len(value) != n:
        raise ValueError(f"{name} must be exactly {n} bytes")


@dataclass(frozen=True)
class DaySeed:
    bytes: bytes
    day: int

    def __post_init__(self):
        _check_len("DaySeed", self.bytes, DAY_SEED_LEN)
        if self.day < 0:
            raise ValueError("day must be non-negative")


@dataclass(frozen=True)
class EpochSeed:
    bytes: bytes
    epoch: int

    def __post_init__(self):
        _check_len("EpochSeed", self.bytes, EPOCH_SEED_LEN)
        if self.epoch < 0:
            raise ValueError("epoch must be non-negative")


@dataclass(frozen=True)
class WindowSeed:
    bytes: bytes
    window: int

    def __post_init__(self):
        _check_len("WindowSeed", self.bytes, WINDOW_SEED_LEN)
        if self.window < 0:
            raise ValueError("window must be non-negative")


@dataclass(frozen=True)
class EpochParams:
    """Time granularity shared by all parties.

    `epoch_minutes` must divide a day; `window_minutes` (hybrid only) must be
    a multiple of `epoch_minutes`.  The origin is fixed at the Unix epoch.
    """

    epoch_minutes: int = 15
    window_minutes: int = 240

    def __post_init__(self):
        if self.epoch_minutes <= 0 or MINUTES_PER_DAY % self.epoch_minutes:
            raise ValueError("epoch_minutes must be positive and divide 1440")
        if self.window_minutes <= 0 or self.window_minutes % self.epoch_minutes:
            raise ValueError("window_minutes must be a positive multiple of epoch_minutes")
        if self.window_minutes > MINUTES_PER_DAY:
            raise ValueError("window_minutes must not exceed a day")

    @property
    def epochs_per_day(self) -> int:
        return MINUTES_PER_DAY // self.epoch_minutes

    @property
    def epochs_per_window(self) -> int:
        return self.window_minutes // self.epoch_minutes

    @property
    def epoch_seconds(self) -> int:
        return self.epoch_minutes * 60

    @property
    def window_seconds(self) -> int:
        return self.window_minutes * 60

    def day_of(self, t: float) -> int:
        return int(t // SECONDS_PER_DAY)

    def epoch_of(self, t: float) -> int:
        return int(t // self.epoch_seconds)

    def window_of(self, t: float) -> int:
        return int(t // self.window_seconds)

    def epoch_start(self, epoch: int) -> int:
        return epoch * self.epoch_seconds

    def window_start(self, window: int) -> int:
        return window * self.window_seconds

    def day_of_window(self, window: int) -> int:
        return self.window_start(window) // SECONDS_PER_DAY

    def day_of_epoch(self, epoch: int) -> int:
        return epoch // self.epochs_per_day


def encode_index(index: int) -> bytes:
    return struct.pack(">I", index)


def rotate_day_seed(prev: DaySeed) -> DaySeed:
    return DaySeed(sha256(prev.bytes), prev.day + 1)


def seed_chain(seed: DaySeed, until_day: int) -> list[DaySeed]:
    """Seeds for days seed.day .. until_day inclusive."""
    chain = [seed]
    while chain[-1].day < until_day:
        chain.append(rotate_day_seed(chain[-1]))
    return chain


def _split_ephids(stream: bytes) -> list[bytes]:
    return [stream[i : i + EPHID_LEN] for i in range(0, len(stream), EPHID_LEN)]


def derive_day_ephids(seed: DaySeed, params: EpochParams) -> list[bytes]:
    """All EphIDs of one day in canonical (unshuffled) order."""
    n = params.epochs_per_day
    return _split_ephids(prg(prf(seed.bytes, BROADCAST_KEY), n * EPHID_LEN))


def derive_window_ephids(seed: WindowSeed, params: EpochParams) -> list[bytes]:
    m = params.epochs_per_window
    return _split_ephids(prg(prf(seed.bytes, HYBRID_KEY), m * EPHID_LEN))


def shuffle_broadcast_order(ephids: list[bytes], rng: random.Random) -> list[bytes]:
    """Return the broadcast schedule: element j is sent during the j-th epoch slot."""
    if not ephids:
        raise ValueError("nothing to schedule")
    schedule = list(ephids)
    rng.shuffle(schedule)
    return schedule


def derive_unlinkable_ephid(seed: EpochSeed) -> bytes:
    return sha256(seed.bytes)[:EPHID_LEN]


def hash_observation(ephid: bytes, epoch: int) -> bytes:
    _check_len("EphID", ephid, EPHID_LEN)
    return sha256(ephid + encode_index(epoch))


def cuckoo_entry(seed: EpochSeed) -> bytes:
    return hash_observation(derive_unlinkable_ephid(seed), seed.epoch)


def random_bytes(rng: random.Random | None, n: int) -> bytes:
    """n random bytes from `rng`, or from OS entropy when rng is None."""
    if rng is None:
        import secrets

        return secrets.token_bytes(n)
    return rng.randbytes(n)
