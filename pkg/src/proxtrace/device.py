"""Smartphone model: broadcast schedule, beacon store, matching and uploads."""

from __future__ import annotations

import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import crypto
from .crypto import (
    EPHID_LEN,
    SECONDS_PER_DAY,
    DaySeed,
    EpochParams,
    EpochSeed,
    WindowSeed,
)
from .cuckoo import CuckooFilter
from .wire import Design, UploadPayload, WireLimits, encode_upload, validate_region

log = logging.getLogger(__name__)

RETENTION_DAYS = 14
# per-group metadata: coarse time u16, count u16, attenuation summary 4 x f32
GROUP_METADATA_BYTES = 20
CLOSE_CONTACT_DB = 60.0


@dataclass
class BeaconObservation:
    identifier: bytes
    attenuation: float
    coarse_time: int
    precise_time: float | None


@dataclass(frozen=True)
class MatchResult:
    coarse_time: int
    day: int
    exposure_measurement: float
    identifier: bytes
    matched_ephid: bytes | None = None
    beacons: int = 1


@dataclass
class Device:
    """One phone running a single design.

    `rng` drives seed generation and broadcast shuffles; pass a seeded
    ``random.Random`` for reproducible runs, or leave it None for OS entropy.
    """

    design: Design
    params: EpochParams = field(default_factory=EpochParams)
    rng: random.Random | None = None
    retention_days: int = RETENTION_DAYS
    visited_regions: list[str] = field(default_factory=list)
    close_contact_db: float = CLOSE_CONTACT_DB
    skew_tolerance_s: float = 0.0

    def __post_init__(self):
        self.design = Design(self.design)
        for r in self.visited_regions:
            validate_region(r)
        self.day_seeds: dict[int, DaySeed] = {}
        self.epoch_seeds: dict[int, EpochSeed] = {}
        self.window_seeds: dict[int, WindowSeed] = {}
        self._schedules: dict[int, list[bytes]] = {}
        self.store: dict[tuple[bytes, int], list[BeaconObservation]] = defaultdict(list)
        self.dropped = 0
        self.downloads_processed_at = float("-inf")

    # -- broadcasting -----------------------------------------------------

    def _random(self, n: int) -> bytes:
        return crypto.random_bytes(self.rng, n)

    def _shuffle_rng(self) -> random.Random:
        return self.rng if self.rng is not None else random.SystemRandom()

    def _day_seed(self, day: int) -> DaySeed:
        if day in self.day_seeds:
            return self.day_seeds[day]
        earlier = [d for d in self.day_seeds if d < day]
        if earlier:
            seed = self.day_seeds[max(earlier)]
            while seed.day < day:
                seed = crypto.rotate_day_seed(seed)
        else:
            seed = DaySeed(self._random(crypto.DAY_SEED_LEN), day)
        self.day_seeds[day] = seed
        return seed

    def ephid_at(self, t: float) -> bytes:
        """EphID this device broadcasts at time t (generating seeds on demand)."""
        p = self.params
        epoch = p.epoch_of(t)
        if self.design is Design.UNLINKABLE:
            seed = self.epoch_seeds.get(epoch)
            if seed is None:
                seed = self.epoch_seeds[epoch] = EpochSeed(self._random(crypto.EPOCH_SEED_LEN), epoch)
            return crypto.derive_unlinkable_ephid(seed)
        if self.design is Design.LOW_COST:
            day = p.day_of(t)
            if day not in self._schedules:
                ephids = crypto.derive_day_ephids(self._day_seed(day), p)
                self._schedules[day] = crypto.shuffle_broadcast_order(ephids, self._shuffle_rng())
            return self._schedules[day][epoch - day * p.epochs_per_day]
        window = p.window_of(t)
        if window not in self._schedules:
            seed = self.window_seeds.get(window)
            if seed is None:
                seed = self.window_seeds[window] = WindowSeed(self._random(crypto.WINDOW_SEED_LEN), window)
            ephids = crypto.derive_window_ephids(seed, p)
            self._schedules[window] = crypto.shuffle_broadcast_order(ephids, self._shuffle_rng())
        first_epoch = p.window_start(window) // p.epoch_seconds
        return self._schedules[window][epoch - first_epoch]

    # -- receiving --------------------------------------------------------

    def coarse_time_of(self, t: float) -> int:
        if self.design is Design.HYBRID:
            return self.params.window_of(t)
        return self.params.day_of(t)

    def _coarse_end(self, coarse: int) -> float:
        if self.design is Design.HYBRID:
            return self.params.window_start(coarse + 1)
        return (coarse + 1) * SECONDS_PER_DAY

    def _coarse_day(self, coarse: int) -> int:
        return self.params.day_of_window(coarse) if self.design is Design.HYBRID else coarse

    def stored_keys(self, ephid: bytes, rx_time: float) -> list[tuple[bytes, int]]:
        """Storage keys (identifier, coarse time) a beacon received at rx_time maps to.

        With a nonzero skew tolerance a beacon close to an interval boundary is
        also filed under the neighbouring interval.
        """
        times = {rx_time}
        if self.skew_tolerance_s:
            times |= {rx_time - self.skew_tolerance_s, rx_time + self.skew_tolerance_s}
        keys = []
        for t in sorted(times):
            if self.design is Design.UNLINKABLE:
                ident = crypto.hash_observation(ephid, self.params.epoch_of(t))
            else:
                ident = ephid
            key = (ident, self.coarse_time_of(t))
            if key not in keys:
                keys.append(key)
        return keys

    def record_beacon(self, ephid: bytes, rx_time: float, attenuation: float) -> bool:
        if not isinstance(ephid, (bytes, bytearray)) or len(ephid) != EPHID_LEN:
            self.dropped += 1
            return False
        ephid = bytes(ephid)
        for ident, coarse in self.stored_keys(ephid, rx_time):
            self.store[(ident, coarse)].append(BeaconObservation(ident, float(attenuation), coarse, rx_time))
        return True

    def observation_count(self) -> int:
        return sum(len(v) for v in self.store.values())

    def storage_bytes(self) -> int:
        """Bytes needed for the grouped store (one entry per identifier group)."""
        return sum(len(ident) + GROUP_METADATA_BYTES for ident, _ in self.store)

    def mark_downloads_processed(self, t: float) -> None:
        self.downloads_processed_at = max(self.downloads_processed_at, t)

    def coarsen_and_prune(self, now: float) -> None:
        cutoff = now - self.retention_days * SECONDS_PER_DAY
        watermark = self.downloads_processed_at
        for key in list(self.store):
            kept = []
            for obs in self.store[key]:
                if obs.precise_time is not None:
                    if obs.precise_time < cutoff:
                        continue
                    if obs.precise_time < watermark:
                        obs.precise_time = None
                elif self._coarse_end(obs.coarse_time) <= cutoff:
                    continue
                kept.append(obs)
            if kept:
                self.store[key] = kept
            else:
                del self.store[key]
        p = self.params
        for day in [d for d in self.day_seeds if (d + 1) * SECONDS_PER_DAY <= cutoff]:
            del self.day_seeds[day]
        for e in [e for e in self.epoch_seeds if p.epoch_start(e + 1) <= cutoff]:
            del self.epoch_seeds[e]
        for w in [w for w in self.window_seeds if p.window_start(w + 1) <= cutoff]:
            del self.window_seeds[w]
        if self.design is not Design.UNLINKABLE:
            for k in list(self._schedules):
                end = (k + 1) * SECONDS_PER_DAY if self.design is Design.LOW_COST else p.window_start(k + 1)
                if end <= cutoff:
                    del self._schedules[k]

    # -- matching ---------------------------------------------------------

    def _predates(self, obs: BeaconObservation, published_at: float) -> bool:
        if obs.precise_time is not None:
            return obs.precise_time < published_at
        # coarsened entries were all received before the last processed download
        if published_at >= self.downloads_processed_at:
            return True
        return self._coarse_end(obs.coarse_time) <= published_at

    def _match_group(self, key, published_at, ephid=None) -> MatchResult | None:
        group = self.store.get(key)
        if not group:
            return None
        early = [o for o in group if self._predates(o, published_at)]
        if not early:
            return None
        ident, coarse = key
        att = sum(o.attenuation for o in early) / len(early)
        return MatchResult(coarse, self._coarse_day(coarse), att, ident, ephid, len(early))

    def _require(self, design: Design):
        if self.design is not design:
            raise ValueError(f"device runs {self.design.value}, cannot match {design.value} data")

    def match_low_cost(self, published) -> list[MatchResult]:
        """`published` holds (DaySeed, publication_time) pairs."""
        self._require(Design.LOW_COST)
        out = []
        for seed, published_at in published:
            for s in crypto.seed_chain(seed, self.params.day_of(published_at)):
                for e in crypto.derive_day_ephids(s, self.params):
                    m = self._match_group((e, s.day), published_at, e)
                    if m:
                        out.append(m)
        return out

    def match_hybrid(self, published) -> list[MatchResult]:
        """`published` holds (WindowSeed, publication_time) pairs."""
        self._require(Design.HYBRID)
        out = []
        for seed, published_at in published:
            for e in crypto.derive_window_ephids(seed, self.params):
                m = self._match_group((e, seed.window), published_at, e)
                if m:
                    out.append(m)
        return out

    def match_unlinkable(self, filt: CuckooFilter, published_at: float) -> list[MatchResult]:
        self._require(Design.UNLINKABLE)
        keys = list(self.store)
        if not keys:
            return []
        words = np.frombuffer(b"".join(k[0] for k in keys), dtype=">u8").reshape(-1, 4)
        hits = filt.contains_many(words[:, 0].astype(np.uint64), words[:, 1].astype(np.uint64))
        out = []
        for key, hit in zip(keys, hits):
            if hit:
                m = self._match_group(key, published_at)
                if m:
                    out.append(m)
        return out

    # -- uploads ----------------------------------------------------------

    def contact_windows(self) -> set[int]:
        """Windows holding at least one observation closer than the exposure cutoff."""
        return {
            coarse
            for (_, coarse), group in self.store.items()
            if any(o.attenuation < self.close_contact_db for o in group)
        }

    def build_upload(self, contagion_start: float, now: float, redactions=()) -> UploadPayload:
        """Assemble the upload for a positive diagnosis and retire the uploaded seeds.

        `redactions` are epoch indices (unlinkable) or window indices (hybrid);
        the low-cost design cannot redact.
        """
        if now - contagion_start > self.retention_days * SECONDS_PER_DAY:
            raise ValueError("contagion_start lies outside the retention window")
        if contagion_start > now:
            raise ValueError("contagion_start is in the future")
        p = self.params
        regions = tuple(self.visited_regions)
        redactions = set(redactions)
        if self.design is Design.LOW_COST:
            if redactions:
                raise ValueError("the low-cost design cannot redact: the seed chain reveals every later day")
            start_day = p.day_of(contagion_start)
            today = p.day_of(now)
            days = sorted(d for d in self.day_seeds if start_day <= d <= today)
            seed = self.day_seeds[days[0]] if days else self._day_seed(start_day)
            self._reseed(now)
            return UploadPayload(Design.LOW_COST, day_seed=seed, visited_regions=regions)
        if self.design is Design.UNLINKABLE:
            lo, hi = p.epoch_of(contagion_start), p.epoch_of(now)
            chosen = sorted(e for e in self.epoch_seeds if lo <= e <= hi and e not in redactions)
            seeds = tuple(self.epoch_seeds.pop(e) for e in chosen)
            return UploadPayload(Design.UNLINKABLE, epoch_seeds=seeds, visited_regions=regions)
        lo, hi = p.window_of(contagion_start), p.window_of(now)
        contacts = self.contact_windows()
        chosen = sorted(
            w for w in self.window_seeds if lo <= w <= hi and w not in redactions and w in contacts
        )
        seeds = []
        for w in chosen:
            seeds.append(self.window_seeds.pop(w))
            self._schedules.pop(w, None)
        return UploadPayload(Design.HYBRID, window_seeds=tuple(seeds), visited_regions=regions)

    def _reseed(self, now: float) -> None:
        today = self.params.day_of(now)
        self.day_seeds.clear()
        self._schedules.clear()
        self.day_seeds[today] = DaySeed(self._random(crypto.DAY_SEED_LEN), today)

    def dummy_upload(self, limits: WireLimits) -> bytes:
        payload = UploadPayload(self.design, is_dummy=True)
        return encode_upload(payload, limits, filler=self._random(limits.upload_size(self.design)))


def dummy_schedule(start: float, end: float, rng: random.Random, mean_days: float = 14.0) -> list[float]:
    """Poisson arrival times of dummy uploads in [start, end)."""
    if mean_days <= 0:
        return []
    times, t = [], start
    while True:
        t += rng.expovariate(1.0 / (mean_days * SECONDS_PER_DAY))
        if t >= end:
            return times
        times.append(t)
