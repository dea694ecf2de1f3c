"""Publication backend: accepts uploads, publishes per-slot batches, federates regions.

The backend never interprets contacts.  Every published batch is a
deterministic function of the real uploads queued for its slot and the slot
index, so the whole history can be rebuilt byte-for-byte from the upload log.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from . import crypto
from .crypto import SECONDS_PER_DAY, EpochParams
from .cuckoo import DEFAULT_FINGERPRINT_BITS, CuckooFilter, FilterFullError, buckets_for
from .wire import (
    Design,
    UploadPayload,
    WireError,
    WireLimits,
    decode_hybrid_body,
    decode_low_cost_body,
    decode_upload,
    encode_hybrid_records,
    encode_low_cost_records,
    validate_region,
)

log = logging.getLogger(__name__)

ACK = b"\x00ACK"
REJECT = b"\x01ERR"

BATCH_MAGIC = b"DP3TBT01"
BATCH_HEADER = struct.Struct(">8sBIQI")

DEFAULT_SLOT_MINUTES = 120


class UnknownRegion(KeyError):
    pass


@dataclass(frozen=True)
class PublishedBatch:
    region: str
    slot_id: int
    design: Design
    publication_time: int
    body: bytes

    def to_bytes(self) -> bytes:
        header = BATCH_HEADER.pack(BATCH_MAGIC, self.design.tag, self.slot_id,
                                   self.publication_time, len(self.body))
        return header + self.body

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    @classmethod
    def from_bytes(cls, region: str, data: bytes) -> "PublishedBatch":
        if len(data) < BATCH_HEADER.size:
            raise WireError("truncated batch")
        magic, tag, slot, pub, n = BATCH_HEADER.unpack_from(data)
        if magic != BATCH_MAGIC or len(data) != BATCH_HEADER.size + n:
            raise WireError("malformed batch")
        return cls(region, slot, Design.from_tag(tag), pub, data[BATCH_HEADER.size:])

    def low_cost_seeds(self) -> list[crypto.DaySeed]:
        return decode_low_cost_body(self.body, self.publication_time // SECONDS_PER_DAY)

    def hybrid_seeds(self) -> list[crypto.WindowSeed]:
        return decode_hybrid_body(self.body)

    def cuckoo_filter(self) -> CuckooFilter:
        return CuckooFilter.deserialize(self.body)


def compatible(upload: Design, region: Design) -> bool:
    """Whether a region running `region` can publish data uploaded under `upload`."""
    return upload is region or region is Design.UNLINKABLE


def filter_entries(payload: UploadPayload, params: EpochParams, publication_day: int) -> list[bytes]:
    """Cuckoo-filter entries for an upload, expanding foreign designs.

    Low-cost and hybrid devices shuffle EphIDs inside their day or window, so
    the broadcast epoch of each EphID is unknown; each one is entered for
    every epoch of the interval it belongs to.
    """
    if payload.design is Design.UNLINKABLE:
        return [crypto.cuckoo_entry(s) for s in payload.epoch_seeds]
    out = []
    if payload.design is Design.LOW_COST:
        for seed in crypto.seed_chain(payload.day_seed, publication_day):
            first = seed.day * params.epochs_per_day
            epochs = range(first, first + params.epochs_per_day)
            for e in crypto.derive_day_ephids(seed, params):
                out.extend(crypto.hash_observation(e, i) for i in epochs)
        return out
    for seed in payload.window_seeds:
        first = params.window_start(seed.window) // params.epoch_seconds
        epochs = range(first, first + params.epochs_per_window)
        for e in crypto.derive_window_ephids(seed, params):
            out.extend(crypto.hash_observation(e, i) for i in epochs)
    return out


def _slot_order_key(slot_id: int, record: bytes) -> bytes:
    return hashlib.sha256(struct.pack(">I", slot_id) + record).digest()


class Backend:
    """One region's backend.

    `data_dir`, when given, holds an append-only upload log plus the batch
    files; a new instance over the same directory replays the log.
    `min_service_time` pads every upload response to a constant duration.
    """

    def __init__(self, region: str, design: Design, params: EpochParams | None = None,
                 slot_minutes: float = DEFAULT_SLOT_MINUTES, retention_days: int = 14,
                 data_dir=None, min_service_time: float = 0.0,
                 fingerprint_bits: int = DEFAULT_FINGERPRINT_BITS, start: float | None = None):
        self.region = validate_region(region)
        self.design = Design(design)
        self.params = params or EpochParams()
        self.limits = WireLimits(self.params, retention_days)
        self.slot_seconds = slot_minutes * 60
        if self.slot_seconds <= 0:
            raise ValueError("slot length must be positive")
        self.retention_days = retention_days
        self.min_service_time = min_service_time
        self.fingerprint_bits = fingerprint_bits
        self.forwarder = None
        self.batches: dict[int, PublishedBatch] = {}
        self._queue: list[tuple[int, str, bytes]] = []
        self._seen: dict[str, int] = {}
        self._lock = threading.Lock()
        self._publish_lock = threading.Lock()
        self.next_slot = None if start is None else self.slot_of(start)
        self.data_dir = Path(data_dir) / self.region if data_dir else None
        if self.data_dir:
            (self.data_dir / "batches").mkdir(parents=True, exist_ok=True)
            self._recover()

    # -- persistence ------------------------------------------------------

    @property
    def _log_path(self) -> Path:
        return self.data_dir / "uploads.log"

    def _append(self, entry: dict) -> None:
        if not self.data_dir:
            return
        with open(self._log_path, "a") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _recover(self) -> None:
        if not self._log_path.exists():
            return
        uploads, published = [], set()
        with open(self._log_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError:
                    log.warning("skipping torn log line in %s", self._log_path)
                    continue
                if entry["op"] == "upload":
                    uploads.append(entry)
                elif entry["op"] == "publish":
                    published.add(entry["slot"])
                    path = self.data_dir / "batches" / f"{entry['slot']}-{entry['digest']}.bin"
                    if path.exists():
                        self.batches[entry["slot"]] = PublishedBatch.from_bytes(self.region, path.read_bytes())
                elif entry["op"] == "expire":
                    self.batches.pop(entry["slot"], None)
                    published.add(entry["slot"])
        last = max(published) if published else None
        for e in uploads:
            self._seen[e["digest"]] = e["slot"]
            if last is None or e["slot"] > last:
                self._queue.append((e["slot"], e["digest"], bytes.fromhex(e["payload"])))
        if last is not None:
            self.next_slot = last + 1
        elif uploads:
            self.next_slot = min(e["slot"] for e in uploads)
        log.info("%s: recovered %d queued uploads, %d batches", self.region, len(self._queue), len(self.batches))

    # -- uploads ----------------------------------------------------------

    def slot_of(self, t: float) -> int:
        return int(t // self.slot_seconds)

    def ingest(self, data: bytes, now: float) -> UploadPayload | None:
        """Validate and queue an upload; dummies are dropped here.

        Returns the decoded payload (dummy or real); raises WireError when the
        upload is malformed or cannot be published in this region.
        """
        payload = decode_upload(data, self.limits, self.params.day_of(now))
        if payload.is_dummy:
            return payload
        if not compatible(payload.design, self.design):
            raise WireError("upload design not publishable in this region")
        digest = hashlib.sha256(data).hexdigest()
        with self._lock:
            if self.next_slot is None:
                self.next_slot = self.slot_of(now)
            if digest in self._seen:
                return payload
            slot = max(self.slot_of(now), self.next_slot)
            self._seen[digest] = slot
            self._queue.append((slot, digest, bytes(data)))
            self._append({"op": "upload", "slot": slot, "digest": digest, "payload": data.hex()})
        return payload

    def accept_upload(self, data: bytes, now: float | None = None) -> bytes:
        started = time.monotonic()
        now = time.time() if now is None else now
        try:
            payload = self.ingest(data, now)
            response = ACK
        except WireError as exc:
            log.debug("rejected upload: %s", exc)
            payload, response = None, REJECT
        if payload is not None and not payload.is_dummy and self.forwarder:
            self.forwarder(self.region, data, payload, now)
        remaining = self.min_service_time - (time.monotonic() - started)
        if remaining > 0:
            time.sleep(remaining)
        return response

    # -- publication ------------------------------------------------------

    def _build_body(self, slot: int, items: list[bytes], publication_time: int) -> bytes:
        pub_day = publication_time // SECONDS_PER_DAY
        payloads = [decode_upload(d, self.limits, pub_day) for d in items]
        if self.design is Design.UNLINKABLE:
            entries = sorted({e for p in payloads for e in filter_entries(p, self.params, pub_day)})
            buckets = buckets_for(len(entries))
            while True:
                filt = CuckooFilter(buckets, self.fingerprint_bits, seed=slot)
                try:
                    for e in entries:
                        filt.insert(e)
                    return filt.serialize()
                except FilterFullError:
                    buckets *= 2
        if self.design is Design.LOW_COST:
            records = encode_low_cost_records(p.day_seed for p in payloads)
        else:
            records = encode_hybrid_records(s for p in payloads for s in p.window_seeds)
        records.sort(key=lambda r: _slot_order_key(slot, r))
        return b"".join(records)

    def publish_slot(self, now: float | None = None) -> list[PublishedBatch]:
        """Publish every slot that ended at or before `now`; empty slots still get a batch."""
        now = time.time() if now is None else now
        out = []
        with self._publish_lock:
            if self.next_slot is None:
                self.next_slot = self.slot_of(now)
            while (self.next_slot + 1) * self.slot_seconds <= now:
                slot = self.next_slot
                with self._lock:
                    items = [d for s, _, d in self._queue if s <= slot]
                    self._queue = [q for q in self._queue if q[0] > slot]
                pub_time = int((slot + 1) * self.slot_seconds)
                batch = PublishedBatch(self.region, slot, self.design, pub_time,
                                       self._build_body(slot, items, pub_time))
                if self.data_dir:
                    path = self.data_dir / "batches" / f"{slot}-{batch.digest}.bin"
                    path.write_bytes(batch.to_bytes())
                self._append({"op": "publish", "slot": slot, "digest": batch.digest})
                self.batches[slot] = batch
                self.next_slot = slot + 1
                out.append(batch)
            self._expire(now)
        return out

    def _expire(self, now: float) -> None:
        cutoff = now - self.retention_days * SECONDS_PER_DAY
        for slot in [s for s, b in self.batches.items() if b.publication_time <= cutoff]:
            batch = self.batches.pop(slot)
            self._append({"op": "expire", "slot": slot})
            if self.data_dir:
                (self.data_dir / "batches" / f"{slot}-{batch.digest}.bin").unlink(missing_ok=True)
        oldest = self.slot_of(cutoff)
        self._seen = {d: s for d, s in self._seen.items() if s >= oldest}

    @property
    def queued(self) -> int:
        return len(self._queue)

    # -- downloads --------------------------------------------------------

    def fetch_batches(self, since_slot: int = -1) -> list[PublishedBatch]:
        return [self.batches[s] for s in sorted(self.batches) if s > since_slot]

    def batch_index(self, since_slot: int = -1) -> bytes:
        entries = [
            {"slot_id": b.slot_id, "digest": b.digest, "size": len(b.to_bytes()),
             "publication_time": b.publication_time, "design": b.design.value}
            for b in self.fetch_batches(since_slot)
        ]
        return json.dumps({"region": self.region, "batches": entries}, sort_keys=True).encode()

    def get_batch(self, slot_id: int) -> bytes:
        return self.batches[slot_id].to_bytes()


@dataclass(frozen=True)
class Receipt:
    region: str
    status: str  # queued | duplicate | retry | unsupported


class Federation:
    """Several regional backends that redistribute uploads to visited regions."""

    def __init__(self, backends):
        self.backends: dict[str, Backend] = {}
        self.unreachable: set[str] = set()
        self.pending: list[tuple[str, bytes]] = []
        for b in backends:
            self.add(b)

    def add(self, backend: Backend) -> None:
        self.backends[backend.region] = backend
        backend.forwarder = self._forward

    def backend(self, region: str) -> Backend:
        try:
            return self.backends[region]
        except KeyError:
            raise UnknownRegion(region) from None

    def submit(self, region: str, data: bytes, now: float | None = None) -> bytes:
        return self.backend(region).accept_upload(data, now)

    def _forward(self, origin: str, data: bytes, payload: UploadPayload, now: float) -> None:
        self.last_receipts = self.forward_upload(origin, data, payload, now)

    def forward_upload(self, origin: str, data: bytes, payload: UploadPayload, now: float) -> dict[str, Receipt]:
        receipts = {}
        for region in payload.visited_regions:
            if region == origin:
                continue
            receipts[region] = self._deliver(region, data, payload, now)
        return receipts

    def _deliver(self, region: str, data: bytes, payload: UploadPayload, now: float) -> Receipt:
        target = self.backends.get(region)
        if target is None or region in self.unreachable:
            self.pending.append((region, data))
            return Receipt(region, "retry")
        if not compatible(payload.design, target.design):
            log.warning("%s cannot publish %s uploads", region, payload.design.value)
            return Receipt(region, "unsupported")
        before = target.queued
        digest = hashlib.sha256(data).hexdigest()
        seen = digest in target._seen
        target.ingest(data, now)
        return Receipt(region, "duplicate" if seen or target.queued == before else "queued")

    def deliver_pending(self, now: float) -> list[Receipt]:
        pending, self.pending = self.pending, []
        out = []
        for region, data in pending:
            ref_day = int(now // SECONDS_PER_DAY)
            backend = self.backends.get(region)
            limits = backend.limits if backend else next(iter(self.backends.values())).limits
            payload = decode_upload(data, limits, ref_day)
            out.append(self._deliver(region, data, payload, now))
        return out

    def publish_all(self, now: float) -> list[PublishedBatch]:
        out = []
        for region in sorted(self.backends):
            out.extend(self.backends[region].publish_slot(now))
        return out

    def fetch_batches(self, region: str, since_slot: int = -1) -> list[PublishedBatch]:
        return self.backend(region).fetch_batches(since_slot)
