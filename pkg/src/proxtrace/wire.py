"""Upload and batch wire formats.

All integers are big-endian.  Upload payloads share a trailer carrying the
visited regions and are zero-padded to a fixed size per design so that real
and dummy uploads of one design cannot be told apart by length::

    low-cost    0x01 | SK (32) | day & 0xFFFF (u16)                  | regions | pad
    unlinkable  0x02 | count u16 | count x (epoch u32 | seed (32))   | regions | pad
    hybrid      0x03 | count u16 | count x (window u32 | seed (16))  | regions | pad
    regions     count u8 | count x (len u8 | ascii)

The top bit of the tag (0x80) flags a dummy upload; the body of a dummy is
random filler.  Batch bodies repeat the record layouts without the upload
framing: ``SK | u16 day`` for low-cost and ``u32 window | seed`` for hybrid,
while unlinkable batches carry one serialized Cuckoo filter.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

from .crypto import (
    DAY_SEED_LEN,
    EPOCH_SEED_LEN,
    MINUTES_PER_DAY,
    WINDOW_SEED_LEN,
    DaySeed,
    EpochParams,
    EpochSeed,
    WindowSeed,
)

DUMMY_FLAG = 0x80
MAX_REGIONS = 16
MAX_REGION_LEN = 8
REGION_BLOCK_MAX = 1 + MAX_REGIONS * (1 + MAX_REGION_LEN)

LOW_COST_RECORD = struct.Struct(">32sH")
UNLINKABLE_RECORD = struct.Struct(">I32s")
HYBRID_RECORD = struct.Struct(">I16s")


class Design(str, enum.Enum):
    LOW_COST = "low_cost"
    UNLINKABLE = "unlinkable"
    HYBRID = "hybrid"

    @property
    def tag(self) -> int:
        return _TAGS[self]

    @classmethod
    def from_tag(cls, tag: int) -> "Design":
        for design, t in _TAGS.items():
            if t == tag:
                return design
        raise WireError(f"unknown design tag {tag:#x}")


_TAGS = {Design.LOW_COST: 0x01, Design.UNLINKABLE: 0x02, Design.HYBRID: 0x03}


class WireError(ValueError):
    pass


def validate_region(region: str) -> str:
    if not region or len(region) > MAX_REGION_LEN or not region.isascii() or not region.isprintable():
        raise ValueError(f"invalid region id {region!r}")
    return region


@dataclass(frozen=True)
class WireLimits:
    """Sizing of fixed-length uploads; both ends must agree on it."""

    params: EpochParams = field(default_factory=EpochParams)
    retention_days: int = 14

    @property
    def max_epochs(self) -> int:
        return self.retention_days * self.params.epochs_per_day

    @property
    def max_windows(self) -> int:
        return self.retention_days * math.ceil(MINUTES_PER_DAY / self.params.window_minutes) + 1

    def upload_size(self, design: Design) -> int:
        if design is Design.LOW_COST:
            body = DAY_SEED_LEN + 2
        elif design is Design.UNLINKABLE:
            body = 2 + self.max_epochs * UNLINKABLE_RECORD.size
        else:
            body = 2 + self.max_windows * HYBRID_RECORD.size
        return 1 + body + REGION_BLOCK_MAX


@dataclass(frozen=True)
class UploadPayload:
    design: Design
    day_seed: DaySeed | None = None
    epoch_seeds: tuple[EpochSeed, ...] = ()
    window_seeds: tuple[WindowSeed, ...] = ()
    visited_regions: tuple[str, ...] = ()
    is_dummy: bool = False


def _encode_regions(regions) -> bytes:
    if len(regions) > MAX_REGIONS:
        raise WireError("too many regions")
    out = bytearray([len(regions)])
    for r in regions:
        raw = validate_region(r).encode("ascii")
        out += bytes([len(raw)]) + raw
    return bytes(out)


def _decode_regions(data: bytes, pos: int) -> tuple[tuple[str, ...], int]:
    count = data[pos]
    pos += 1
    if count > MAX_REGIONS:
        raise WireError("too many regions")
    regions = []
    for _ in range(count):
        n = data[pos]
        raw = data[pos + 1 : pos + 1 + n]
        if len(raw) != n:
            raise WireError("truncated region list")
        try:
            regions.append(validate_region(raw.decode("ascii")))
        except (UnicodeDecodeError, ValueError) as exc:
            raise WireError(str(exc)) from None
        pos += 1 + n
    return tuple(regions), pos


def encode_upload(payload: UploadPayload, limits: WireLimits, filler: bytes | None = None) -> bytes:
    """Serialize to the fixed per-design size.

    Dummies need `filler`: random bytes used as the body so the padding region
    does not give them away on a channel that leaks compression or content.
    """
    size = limits.upload_size(payload.design)
    tag = payload.design.tag
    if payload.is_dummy:
        if filler is None or len(filler) < size - 1:
            raise WireError("dummy uploads need size-1 bytes of random filler")
        return bytes([tag | DUMMY_FLAG]) + filler[: size - 1]
    out = bytearray([tag])
    if payload.design is Design.LOW_COST:
        if payload.day_seed is None:
            raise WireError("low-cost upload needs a day seed")
        out += LOW_COST_RECORD.pack(payload.day_seed.bytes, payload.day_seed.day & 0xFFFF)
    elif payload.design is Design.UNLINKABLE:
        if len(payload.epoch_seeds) > limits.max_epochs:
            raise WireError("too many epoch seeds")
        out += struct.pack(">H", len(payload.epoch_seeds))
        for s in payload.epoch_seeds:
            out += UNLINKABLE_RECORD.pack(s.epoch, s.bytes)
    else:
        if len(payload.window_seeds) > limits.max_windows:
            raise WireError("too many window seeds")
        out += struct.pack(">H", len(payload.window_seeds))
        for s in payload.window_seeds:
            out += HYBRID_RECORD.pack(s.window, s.bytes)
    out += _encode_regions(payload.visited_regions)
    out += bytes(size - len(out))
    return bytes(out)


def expand_day(low16: int, reference_day: int) -> int:
    """Recover a full day index from its low 16 bits, taking the latest day <= reference_day."""
    return reference_day - ((reference_day - low16) & 0xFFFF)


def decode_upload(data: bytes, limits: WireLimits, reference_day: int) -> UploadPayload:
    if not data:
        raise WireError("empty upload")
    tag = data[0]
    design = Design.from_tag(tag & ~DUMMY_FLAG)
    if len(data) != limits.upload_size(design):
        raise WireError("bad upload length")
    if tag & DUMMY_FLAG:
        return UploadPayload(design, is_dummy=True)
    try:
        if design is Design.LOW_COST:
            sk, low = LOW_COST_RECORD.unpack_from(data, 1)
            seed = DaySeed(sk, expand_day(low, reference_day))
            regions, _ = _decode_regions(data, 1 + LOW_COST_RECORD.size)
            return UploadPayload(design, day_seed=seed, visited_regions=regions)
        (count,) = struct.unpack_from(">H", data, 1)
        pos = 3
        if design is Design.UNLINKABLE:
            if count > limits.max_epochs:
                raise WireError("too many epoch seeds")
            seeds = []
            for _ in range(count):
                epoch, raw = UNLINKABLE_RECORD.unpack_from(data, pos)
                seeds.append(EpochSeed(raw, epoch))
                pos += UNLINKABLE_RECORD.size
            regions, _ = _decode_regions(data, pos)
            return UploadPayload(design, epoch_seeds=tuple(seeds), visited_regions=regions)
        if count > limits.max_windows:
            raise WireError("too many window seeds")
        seeds = []
        for _ in range(count):
            window, raw = HYBRID_RECORD.unpack_from(data, pos)
            seeds.append(WindowSeed(raw, window))
            pos += HYBRID_RECORD.size
        regions, _ = _decode_regions(data, pos)
        return UploadPayload(design, window_seeds=tuple(seeds), visited_regions=regions)
    except (struct.error, IndexError) as exc:
        raise WireError(f"malformed upload: {exc}") from None


def encode_low_cost_records(seeds) -> list[bytes]:
    return [LOW_COST_RECORD.pack(s.bytes, s.day & 0xFFFF) for s in seeds]


def decode_low_cost_body(body: bytes, reference_day: int) -> list[DaySeed]:
    if len(body) % LOW_COST_RECORD.size:
        raise WireError("low-cost batch body is not a whole number of records")
    return [DaySeed(sk, expand_day(low, reference_day)) for sk, low in LOW_COST_RECORD.iter_unpack(body)]


def encode_hybrid_records(seeds) -> list[bytes]:
    return [HYBRID_RECORD.pack(s.window, s.bytes) for s in seeds]


def decode_hybrid_body(body: bytes) -> list[WindowSeed]:
    if len(body) % HYBRID_RECORD.size:
        raise WireError("hybrid batch body is not a whole number of records")
    return [WindowSeed(raw, w) for w, raw in HYBRID_RECORD.iter_unpack(body)]
