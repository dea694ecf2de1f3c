"""k-of-n spreading of EphIDs across beacons with Shamir sharing over GF(2^8).

Each of the 16 EphID bytes is the constant term of its own random polynomial
of degree k-1; share j carries the 16 evaluations at x = j.  A field this
small allows at most 255 shares per split, so a device broadcasting more
beacons than that per epoch splits the EphID afresh every `n` beacons (a
"sharing round").  Shares from different rounds never combine.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import binom

from .crypto import EPHID_LEN

SHARE_PAYLOAD_LEN = 1 + EPHID_LEN

# GF(2^8) with the AES polynomial x^8 + x^4 + x^3 + x + 1 and generator 3
_EXP = np.zeros(512, dtype=np.uint8)
_LOG = np.zeros(256, dtype=np.int64)
_x = 1
for _i in range(255):
    _EXP[_i] = _x
    _LOG[_x] = _i
    _x ^= (_x << 1) ^ (0x11B if _x & 0x80 else 0)
_EXP[255:510] = _EXP[:255]
del _x, _i


def gf_mul(a, b):
    """Elementwise product in GF(2^8) (scalars or uint8 arrays)."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    out = _EXP[_LOG[a] + _LOG[b]]
    return np.where((a == 0) | (b == 0), np.uint8(0), out)


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(2^8)")
    return int(_EXP[255 - _LOG[a]])


class InsufficientShares(Exception):
    pass


class ShareMixError(ValueError):
    pass


@dataclass(frozen=True)
class SharingParams:
    k: int
    n: int

    def __post_init__(self):
        if not 1 <= self.k <= self.n <= 255:
            raise ValueError("need 1 <= k <= n <= 255")


@dataclass(frozen=True)
class Share:
    epoch: int
    index: int
    value: bytes

    @property
    def payload(self) -> bytes:
        return bytes([self.index]) + self.value

    @classmethod
    def from_payload(cls, epoch: int, payload: bytes) -> "Share":
        if len(payload) != SHARE_PAYLOAD_LEN or payload[0] == 0:
            raise ValueError("malformed share payload")
        return cls(epoch, payload[0], bytes(payload[1:]))


def split(ephid: bytes, epoch: int, params: SharingParams, rng: random.Random | None = None) -> list[Share]:
    if len(ephid) != EPHID_LEN:
        raise ValueError("EphID must be 16 bytes")
    rng = rng or random.SystemRandom()
    k, n = params.k, params.n
    coeffs = np.frombuffer(bytes(ephid) + rng.randbytes((k - 1) * EPHID_LEN), dtype=np.uint8)
    coeffs = coeffs.reshape(k, EPHID_LEN)
    xs = np.arange(1, n + 1, dtype=np.uint8)
    # Horner evaluation over all shares at once
    acc = np.zeros((n, EPHID_LEN), dtype=np.uint8)
    for c in coeffs[::-1]:
        acc = gf_mul(acc, xs[:, None]) ^ c[None, :]
    return [Share(epoch, int(x), acc[j].tobytes()) for j, x in enumerate(xs)]


def reconstruct(shares, k: int) -> bytes:
    """Lagrange interpolation at x = 0 using the first k shares."""
    shares = list(shares)
    if len({s.epoch for s in shares}) > 1:
        raise ShareMixError("shares from different epochs")
    idx = [s.index for s in shares]
    if len(set(idx)) != len(idx):
        raise ShareMixError("duplicate share indices")
    if len(shares) < k:
        raise InsufficientShares(f"{len(shares)} of {k} shares")
    use = shares[:k]
    out = np.zeros(EPHID_LEN, dtype=np.uint8)
    for i, si in enumerate(use):
        num, den = 1, 1
        for j, sj in enumerate(use):
            if i != j:
                # in characteristic 2, (0 - x_j) / (x_i - x_j) = x_j / (x_i ^ x_j)
                num = int(gf_mul(num, sj.index))
                den = int(gf_mul(den, si.index ^ sj.index))
        coef = int(gf_mul(num, gf_inv(den)))
        out ^= gf_mul(np.frombuffer(si.value, dtype=np.uint8), coef)
    return out.tobytes()


def round_layout(contact_beacons: int, n: int, offset: int = 0) -> list[int]:
    """Beacons heard from each sharing round during a contact.

    The contact starts `offset` beacons into a round and lasts
    `contact_beacons` beacons.
    """
    if contact_beacons < 0 or not 0 <= offset < n:
        raise ValueError("bad contact layout")
    sizes, remaining = [], contact_beacons
    first = min(n - offset, remaining)
    if first:
        sizes.append(first)
        remaining -= first
    while remaining > 0:
        sizes.append(min(n, remaining))
        remaining -= sizes[-1]
    return sizes


def binomial_tail(trials: int, p: float, k: int) -> float:
    """P[Bin(trials, p) >= k] by summing every pmf term (log-space)."""
    if k <= 0:
        return 1.0
    if k > trials:
        return 0.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    i = np.arange(k, trials + 1)
    return float(min(1.0, math.exp(logsumexp(binom.logpmf(i, trials, p)))))


def reception_probability(p: float, params: SharingParams, contact_beacons: int, offset: int = 0) -> float:
    """Exact chance of reconstructing the EphID during a contact.

    With ``contact_beacons <= n`` inside one round this is P[Bin(contact, p) >= k].
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be a probability")
    miss = 1.0
    for size in round_layout(contact_beacons, params.n, offset):
        miss *= 1.0 - binomial_tail(size, p, params.k)
    return 1.0 - miss


def tune_threshold(p_legit: float, p_attacker: float, contact_beacons: int, n: int = 240,
                   legit_min: float = 0.999, attacker_max: float = 0.01) -> SharingParams:
    """Smallest k giving legit reception > legit_min and attacker reception < attacker_max."""
    for k in range(1, n + 1):
        params = SharingParams(k, n)
        if reception_probability(p_attacker, params, contact_beacons) >= attacker_max:
            continue
        if reception_probability(p_legit, params, contact_beacons) > legit_min:
            return params
        break
    raise ValueError("no k satisfies both reception targets")
