"""Discrete-event execution of a scenario through the whole protocol cycle.

Beacons are scheduled per broadcaster while some other receiver is around;
every slot boundary publishes batches, after which each agent downloads,
matches, scores and possibly gets notified.  All randomness comes from
string-seeded ``random.Random`` streams, so a scenario and seed fully
determine the event log.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field

from ..backend import Backend, Federation, PublishedBatch
from ..crypto import SECONDS_PER_DAY
from ..device import Device, dummy_schedule
from ..exposure import daily_scores, decide_notification
from ..sharing import InsufficientShares, Share, reconstruct, split
from ..wire import Design, WireLimits, encode_upload
from .scenario import AgentSpec, Antenna, Scenario, Segment

# tie-break order for events at the same instant
_PUBLISH, _UPLOAD, _POLL, _BEACON = range(4)


class EventLog:
    """Time-ordered list of plain dict events."""

    def __init__(self):
        self.events: list[dict] = []

    def add(self, t: float, kind: str, **fields) -> dict:
        ev = {"t": round(t, 6), "kind": kind, **fields}
        self.events.append(ev)
        return ev

    def of_kind(self, *kinds) -> list[dict]:
        return [e for e in self.events if e["kind"] in kinds]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self.events)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


@dataclass(frozen=True)
class Capture:
    """One beacon heard by an adversary antenna: broadcast bytes and local metadata only."""

    t: float
    antenna: str
    payload: bytes
    address: bytes | None
    attenuation: float


@dataclass
class SimResult:
    scenario: Scenario
    events: EventLog
    metrics: dict
    federation: Federation
    devices: dict
    uploads: list = field(default_factory=list)
    captures: list = field(default_factory=list)
    batches: list = field(default_factory=list)


def _merge(intervals):
    out = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return out


class _Run:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.p = sc.params
        seed = sc.seed
        self.rng_channel = random.Random(f"{seed}:channel")
        self.rng_phase = random.Random(f"{seed}:phase")
        self.rng_dummy = random.Random(f"{seed}:dummy")
        self.log = EventLog()
        self.limits = WireLimits(self.p)
        self.fed = Federation(
            Backend(r, d, self.p, slot_minutes=sc.slot_minutes, start=sc.start) for r, d in sorted(sc.regions.items())
        )
        self.agents: list[AgentSpec] = list(sc.agents)
        self.sybils: set[str] = set()
        adv = sc.adversary
        self.antennas: list[Antenna] = []
        if adv and adv.kind == "relay":
            self.antennas.append(adv.capture)
        elif adv and adv.kind == "linkage":
            self.antennas.extend(adv.antennas)
        elif adv and adv.kind == "multi_account":
            design = sc.regions[adv.region]
            for i in range(adv.accounts):
                lo = adv.account_start + i * adv.account_length
                hi = min(lo + adv.account_length, sc.duration)
                if lo >= sc.duration:
                    break
                aid = f"sybil-{i}"
                self.sybils.add(aid)
                self.agents.append(AgentSpec(aid, design, adv.region, (adv.region,),
                                             (Segment(lo, hi, *adv.position),)))
        self.devices = {
            a.id: Device(a.design, self.p, rng=random.Random(f"{seed}:device:{a.id}"),
                         visited_regions=list(a.visited))
            for a in self.agents
        }
        self.share_rng = {a.id: random.Random(f"{seed}:share:{a.id}") for a in self.agents}
        self.share_cache: dict[str, tuple] = {}
        self.collectors = {a.id: {} for a in self.agents}
        self.last_ephid: dict[str, bytes] = {}
        self.provenance = {a.id: defaultdict(set) for a in self.agents}
        self.matches = {a.id: {} for a in self.agents}
        self.notified: dict[str, list[int]] = {}
        self.since = defaultdict(lambda: -1)
        self.download_bytes = {a.id: 0 for a in self.agents}
        self.uploads, self.captures, self.batches = [], [], []
        self.counts = defaultdict(int)
        self.polls = []
        self.queue = []
        self.seq = itertools.count()

    # -- scheduling -------------------------------------------------------

    def push(self, t, prio, kind, data=None):
        heapq.heappush(self.queue, (t, prio, next(self.seq), kind, data))

    def _listener_spans(self, exclude: str):
        spans = []
        for a in self.agents:
            if a.id != exclude:
                spans.extend((s.start, s.end) for s in a.trace)
        for ant in self.antennas:
            spans.append((max(ant.start, 0.0), min(ant.end, self.sc.duration)))
        return spans

    def _beacon_times(self, agent: AgentSpec):
        """Broadcast instants: own presence intersected with any other receiver's presence."""
        interval = self.sc.beacon_interval
        phase = self.rng_phase.uniform(0, interval)
        others = self._listener_spans(agent.id)
        active = []
        for s in agent.trace:
            for lo, hi in others:
                lo, hi = max(lo, s.start), min(hi, s.end)
                if lo < hi:
                    active.append((lo, hi))
        for lo, hi in _merge(active):
            k = math.ceil((lo - phase) / interval)
            while True:
                t = phase + k * interval
                if t >= hi:
                    break
                yield self.sc.start + t
                k += 1

    def schedule(self):
        sc = self.sc
        for a in self.agents:
            gen = self._beacon_times(a)
            first = next(gen, None)
            if first is not None:
                self.push(first, _BEACON, "beacon", (a, gen))
            if a.diagnosis:
                self.push(sc.start + a.diagnosis.at, _UPLOAD, "upload", a)
            if a.dummy_mean_days:
                for t in dummy_schedule(sc.start, sc.end, self.rng_dummy, a.dummy_mean_days):
                    self.push(t, _UPLOAD, "dummy", a)
        slot = sc.slot_minutes * 60
        k = math.floor(sc.start / slot) + 1
        while k * slot <= sc.end:
            self.push(k * slot, _PUBLISH, "publish")
            k += 1
        adv = sc.adversary
        if adv and adv.kind == "polling":
            t = sc.start + adv.poll_interval
            while t <= sc.end:
                self.push(t, _POLL, "poll")
                t += adv.poll_interval

    # -- radio ------------------------------------------------------------

    def _position(self, spec: AgentSpec, t: float):
        return spec.position(t - self.sc.start)

    def _payload(self, agent: AgentSpec, ephid: bytes, t: float):
        sharing = self.sc.sharing
        if sharing is None:
            return ephid, None
        p = self.p
        epoch = p.epoch_of(t)
        j = int((t - p.epoch_start(epoch)) // self.sc.beacon_interval)
        key = (epoch, j // sharing.n)
        cached = self.share_cache.get(agent.id)
        if cached is None or cached[0] != key:
            rng = self.share_rng[agent.id]
            cached = (key, split(ephid, epoch, sharing, rng), rng.randbytes(6))
            self.share_cache[agent.id] = cached
        _, shares, address = cached
        return shares[j % sharing.n].payload, address

    def _transmit(self, source: str, pos, payload, address, t, relayed: bool):
        ch = self.sc.channel
        for b in self.agents:
            if b.id == source:
                continue
            where = self._position(b, t)
            if where is None:
                continue
            d = math.dist(pos, where)
            if d > ch.max_range:
                continue
            if self.rng_channel.random() < ch.reception_prob(d):
                self._receive(b, payload, address, t, ch.attenuation(d), source, relayed)
        if relayed:
            return
        rel = t - self.sc.start
        for ant in self.antennas:
            if not ant.start <= rel < ant.end:
                continue
            d = math.dist(pos, (ant.x, ant.y))
            if d > ch.max_range:
                continue
            if self.rng_channel.random() < ch.reception_prob(d):
                self._capture(ant, payload, address, t, ch.attenuation(d))

    def _receive(self, agent: AgentSpec, payload, address, t, att, source, relayed):
        k = self.sc.sharing.k if self.sc.sharing else None
        if address is None:
            heard = [(payload, t, att)]
        else:
            entry = self.collectors[agent.id].setdefault(address, {"ephid": None, "shares": {}})
            if entry["ephid"] is not None:
                heard = [(entry["ephid"], t, att)]
            else:
                share = Share.from_payload(0, payload)
                entry["shares"].setdefault(share.index, (share, t, att))
                if len(entry["shares"]) < k:
                    return
                try:
                    entry["ephid"] = reconstruct([s for s, _, _ in entry["shares"].values()], k)
                except InsufficientShares:
                    return
                heard = [(entry["ephid"], tt, aa) for _, tt, aa in entry["shares"].values()]
                entry["shares"] = {}
        dev = self.devices[agent.id]
        tag = "relay" if relayed else f"agent:{source}"
        for ephid, rx, a in heard:
            keys = dev.stored_keys(ephid, rx)
            if not dev.record_beacon(ephid, rx, a):
                continue
            for key in keys:
                self.provenance[agent.id][key].add(tag)
            self.counts["relayed_receives" if relayed else "receives"] += 1
            self.log.add(t, "receive", agent=agent.id, ephid=ephid.hex(), rx_time=round(rx, 6),
                         attenuation=round(a, 4), source="relay" if relayed else source,
                         keys=[[i.hex(), c] for i, c in keys])

    def _capture(self, ant: Antenna, payload, address, t, att):
        cap = Capture(t, ant.id, bytes(payload), address, att)
        self.captures.append(cap)
        self.log.add(t, "adversary-observe", antenna=ant.id, payload=cap.payload.hex(),
                     address=address.hex() if address else None, attenuation=round(att, 4))
        adv = self.sc.adversary
        if adv.kind == "relay" and t + adv.delay <= self.sc.end:
            self.push(t + adv.delay, _BEACON, "relay", cap)

    # -- handlers ---------------------------------------------------------

    def on_beacon(self, t, data):
        agent, gen = data
        nxt = next(gen, None)
        if nxt is not None:
            self.push(nxt, _BEACON, "beacon", (agent, gen))
        ephid = self.devices[agent.id].ephid_at(t)
        if self.last_ephid.get(agent.id) != ephid:
            self.last_ephid[agent.id] = ephid
            self.counts["broadcasts"] += 1
            self.log.add(t, "broadcast", agent=agent.id, ephid=ephid.hex(), epoch=self.p.epoch_of(t))
        payload, address = self._payload(agent, ephid, t)
        self._transmit(agent.id, self._position(agent, t), payload, address, t, relayed=False)

    def on_relay(self, t, cap: Capture):
        adv = self.sc.adversary
        self.counts["relayed_beacons"] += 1
        self.log.add(t, "adversary-relay", payload=cap.payload.hex(), captured_at=round(cap.t, 6))
        self._transmit("relay", adv.rebroadcast, cap.payload, cap.address, t, relayed=True)

    def _redactions(self, agent: AgentSpec) -> list[int]:
        p, out = self.p, []
        for lo, hi in agent.diagnosis.redact:
            a, b = self.sc.start + lo, self.sc.start + hi - 1e-6
            if agent.design is Design.UNLINKABLE:
                out.extend(range(p.epoch_of(a), p.epoch_of(b) + 1))
            else:
                out.extend(range(p.window_of(a), p.window_of(b) + 1))
        return out

    def on_upload(self, t, agent: AgentSpec):
        dev = self.devices[agent.id]
        diag = agent.diagnosis
        start = max(self.sc.start + diag.contagious_from, t - dev.retention_days * SECONDS_PER_DAY)
        payload = dev.build_upload(start, t, self._redactions(agent))
        data = encode_upload(payload, self.limits)
        self.fed.last_receipts = {}
        resp = self.fed.submit(agent.home, data, t)
        receipts = {r: rc.status for r, rc in sorted(self.fed.last_receipts.items())}
        n = {Design.LOW_COST: 1, Design.UNLINKABLE: len(payload.epoch_seeds),
             Design.HYBRID: len(payload.window_seeds)}[payload.design]
        self.uploads.append({"agent": agent.id, "region": agent.home, "time": t, "payload": payload})
        self.counts["uploads"] += 1
        self.log.add(t, "upload", agent=agent.id, region=agent.home, design=payload.design.value,
                     bytes=len(data), seeds=n, accepted=resp[:1] == b"\x00", forwarded=receipts, dummy=False)

    def on_dummy(self, t, agent: AgentSpec):
        data = self.devices[agent.id].dummy_upload(self.limits)
        resp = self.fed.submit(agent.home, data, t)
        self.counts["dummy_uploads"] += 1
        self.log.add(t, "upload", agent=agent.id, region=agent.home, design=agent.design.value,
                     bytes=len(data), seeds=0, accepted=resp[:1] == b"\x00", forwarded={}, dummy=True)

    def on_poll(self, t, _):
        adv = self.sc.adversary
        index = json.loads(self.fed.backend(adv.region).batch_index())
        pubs = [b["publication_time"] for b in index["batches"]]
        self.polls.append((t, pubs))
        self.log.add(t, "adversary-observe", antenna="poller", region=adv.region, batches=len(pubs))

    def _match(self, dev: Device, batch: PublishedBatch):
        if batch.design is not dev.design:
            return []
        pub = batch.publication_time
        if batch.design is Design.LOW_COST:
            return dev.match_low_cost([(s, pub) for s in batch.low_cost_seeds()])
        if batch.design is Design.HYBRID:
            return dev.match_hybrid([(s, pub) for s in batch.hybrid_seeds()])
        if not batch.body:
            return []
        return dev.match_unlinkable(batch.cuckoo_filter(), pub)

    def on_publish(self, t, _):
        self.fed.deliver_pending(t)
        for b in self.fed.publish_all(t):
            self.batches.append(b)
            self.log.add(t, "publish", region=b.region, slot=b.slot_id, design=b.design.value,
                         digest=b.digest, bytes=len(b.to_bytes()), publication_time=b.publication_time)
        cfg = self.sc.exposure
        today = self.p.day_of(t)
        for a in self.agents:
            dev = self.devices[a.id]
            for region in a.visited:
                new = self.fed.fetch_batches(region, self.since[(a.id, region)])
                if not new:
                    continue
                self.since[(a.id, region)] = new[-1].slot_id
                size = sum(len(b.to_bytes()) for b in new)
                self.download_bytes[a.id] += size
                self.log.add(t, "download", agent=a.id, region=region, batches=len(new), bytes=size)
                for b in new:
                    for m in self._match(dev, b):
                        key = (m.identifier, m.coarse_time)
                        if key in self.matches[a.id]:
                            continue
                        self.matches[a.id][key] = m
                        genuine = any(s.startswith("agent:") for s in self.provenance[a.id].get(key, ()))
                        self.counts["matches_true" if genuine else "matches_false"] += 1
                        self.log.add(t, "match", agent=a.id, region=region, slot=b.slot_id, digest=b.digest,
                                     identifier=m.identifier.hex(), coarse_time=m.coarse_time, day=m.day,
                                     attenuation=round(m.exposure_measurement, 4), beacons=m.beacons,
                                     genuine=genuine)
            dev.mark_downloads_processed(t)
            dev.coarsen_and_prune(t)
            if a.id in self.notified or not self.matches[a.id]:
                continue
            decision = decide_notification(daily_scores(self.matches[a.id].values(), cfg, today), cfg)
            if decision.notify:
                self.notified[a.id] = list(decision.days)
                self.log.add(t, "notify", agent=a.id, days=list(decision.days))

    # -- driver -----------------------------------------------------------

    def run(self) -> SimResult:
        self.schedule()
        handlers = {"beacon": self.on_beacon, "relay": self.on_relay, "upload": self.on_upload,
                    "dummy": self.on_dummy, "publish": self.on_publish, "poll": self.on_poll}
        while self.queue:
            t, _, _, kind, data = heapq.heappop(self.queue)
            handlers[kind](t, data)
        return SimResult(self.sc, self.log, self._metrics(), self.fed, self.devices,
                         self.uploads, self.captures, self.batches)

    def _metrics(self) -> dict:
        false_victims = sorted(self._false_victims())
        m = {
            "scenario": self.sc.name,
            "seed": self.sc.seed,
            "agents": len(self.sc.agents),
            "broadcasts": self.counts["broadcasts"],
            "receives": self.counts["receives"],
            "relayed_receives": self.counts["relayed_receives"],
            "uploads": self.counts["uploads"],
            "dummy_uploads": self.counts["dummy_uploads"],
            "batches": len(self.batches),
            "matches_true": self.counts["matches_true"],
            "matches_false": self.counts["matches_false"],
            "false_match_victims": false_victims,
            "notified": sorted(a for a in self.notified if a not in self.sybils),
            "download_bytes": {a: n for a, n in sorted(self.download_bytes.items()) if a not in self.sybils},
        }
        adv = self.sc.adversary
        if adv is not None:
            m["adversary"] = self._adversary_metrics(adv)
        return m

    def _adversary_metrics(self, adv) -> dict:
        out = {"kind": adv.kind}
        if adv.kind == "relay":
            out.update(captured=len(self.captures), relayed_beacons=self.counts["relayed_beacons"],
                       victims_falsely_matched=len(self._false_victims()))
        elif adv.kind == "linkage":
            from .attacks import attribute_tracks, run_linkage_analysis

            report = run_linkage_analysis(self.captures, self.batches, self.p)
            out.update(captured=len(self.captures), identities=len(report.tracks), max_track=report.max_track,
                       per_patient=attribute_tracks(report, self.log))
        elif adv.kind == "multi_account":
            hits = sorted((a for a in self.notified if a in self.sybils), key=lambda s: int(s.split("-")[1]))
            out.update(accounts=len(self.sybils), notified_accounts=hits)
        elif adv.kind == "polling":
            slot = self.sc.slot_minutes * 60
            seen = sorted({p for _, pubs in self.polls for p in pubs})
            out.update(polls=len(self.polls), publications_seen=len(seen),
                       on_slot_boundaries=all(p % slot == 0 for p in seen))
        elif adv.kind == "eavesdrop" and self.sc.sharing:
            from .attacks import run_eavesdrop_experiment

            res = run_eavesdrop_experiment(adv.distance, adv.duration, self.sc.sharing, adv.trials,
                                           channel=self.sc.channel, beacon_interval=self.sc.beacon_interval,
                                           seed=self.sc.seed)
            out.update(res.to_dict())
        return out

    def _false_victims(self):
        return [a for a, ms in self.matches.items()
                if any(not any(s.startswith("agent:") for s in self.provenance[a].get(k, ())) for k in ms)]


def run(scenario: Scenario) -> SimResult:
    """Execute a scenario; the same scenario and seed always give the same event log."""
    return _Run(scenario).run()
