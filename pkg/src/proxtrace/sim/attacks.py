"""Scripted adversaries: relays, passive linkage, share eavesdropping.

The analyses here only see what an adversary could see: captured broadcast
bytes with their local reception time, and published batches.
"""

from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .. import crypto
from ..crypto import EpochParams
from ..sharing import SharingParams, reconstruct, reception_probability, round_layout, split
from ..wire import Design
from .channel import ChannelModel
from .engine import SimResult, run
from .scenario import Scenario

# -- relays -----------------------------------------------------------------


@dataclass(frozen=True)
class RelayOutcome:
    victims_falsely_matched: int
    false_matches: int
    relayed_receives: int
    result: SimResult

    @property
    def succeeded(self) -> bool:
        return self.victims_falsely_matched > 0


def run_relay_attack(scenario: Scenario) -> RelayOutcome:
    """Run a relay scenario; success means a relayed beacon produced a match."""
    if scenario.adversary is None or scenario.adversary.kind != "relay":
        raise ValueError("scenario has no relay adversary")
    res = run(scenario)
    m = res.metrics
    return RelayOutcome(len(m["false_match_victims"]), m["matches_false"], m["relayed_receives"], res)


CAPTURE_MINUTES = 10.0


def relay_scenario(design, delay_h: float, capture_start_h: float, capture_minutes: float = CAPTURE_MINUTES,
                   seed: int = 0, slot_minutes: float = 120.0, epoch_minutes: int = 15,
                   window_minutes: int = 240, name: str | None = None) -> Scenario:
    """Source S and companion C are captured at 1 m; victim V hears the replay far away.

    S is diagnosed half an hour after the replay ends and uploads everything
    since the start of the scenario.
    """
    design = Design(design).value
    cap_h = capture_minutes / 60
    lo, hi = capture_start_h, capture_start_h + cap_h
    diag = hi + delay_h + 0.5
    duration = diag + 2 * slot_minutes / 60 + 0.01
    raw = {
        "name": name or f"relay-{design}",
        "seed": seed,
        "duration_h": duration,
        "epoch_minutes": epoch_minutes,
        "window_minutes": window_minutes,
        "slot_minutes": slot_minutes,
        "regions": {"CH": design},
        "agents": [
            {"id": "source", "design": design, "home": "CH",
             "trace": [{"start_h": lo, "end_h": hi, "x": 0, "y": 0}],
             "diagnosis": {"at_h": diag, "contagious_from_h": 0}},
            {"id": "companion", "design": design, "home": "CH",
             "trace": [{"start_h": lo, "end_h": hi, "x": 1, "y": 0}]},
            {"id": "victim", "design": design, "home": "CH",
             "trace": [{"start_h": lo + delay_h, "end_h": hi + delay_h + 1 / 60, "x": 1000, "y": 0}]},
        ],
        "adversary": {"kind": "relay", "delay_h": delay_h,
                      "capture": {"x": 0, "y": -1, "start_h": lo, "end_h": hi},
                      "rebroadcast": [1000, 1]},
    }
    return Scenario.from_dict(raw)


# cell name -> (design, attack expected to succeed)
REPLAY_CELLS = {
    "lowcost-same-day": (Design.LOW_COST, True),
    "lowcost-25h": (Design.LOW_COST, False),
    "unlinkable-cross-epoch": (Design.UNLINKABLE, False),
    "hybrid-cross-window": (Design.HYBRID, False),
    "hybrid-intra-window": (Design.HYBRID, True),
}


def random_relay_scenario(cell: str, seed: int) -> Scenario:
    """A randomized relay trial for one cell of the replay matrix."""
    if cell not in REPLAY_CELLS:
        raise ValueError(f"unknown relay cell {cell!r}; have {sorted(REPLAY_CELLS)}")
    design = REPLAY_CELLS[cell][0]
    rng = random.Random(f"relay:{cell}:{seed}")
    cap = CAPTURE_MINUTES / 60
    epoch_h, window_h = 15 / 60, 4.0
    if cell == "lowcost-same-day":
        delay = rng.uniform(0.25, 8.0)
        start = rng.uniform(0, 24 - delay - cap - 0.05)
    elif cell == "lowcost-25h":
        delay = rng.uniform(25.0, 40.0)
        start = rng.uniform(0, 24 - cap)
    elif cell == "unlinkable-cross-epoch":
        delay = rng.uniform(epoch_h, 24.0)
        start = rng.uniform(0, 24 - cap)
    elif cell == "hybrid-cross-window":
        delay = rng.uniform(window_h, 24.0)
        start = rng.uniform(0, 24 - cap)
    else:
        w = rng.randrange(6)
        delay = rng.uniform(0.02, window_h - cap - 0.1)
        start = rng.uniform(w * window_h, (w + 1) * window_h - cap - delay - 0.05)
    return relay_scenario(design, round(delay, 6), round(start, 6), seed=seed, name=f"relay-{cell}")


# -- linkage ------------------------------------------------------------------


@dataclass(frozen=True)
class Track:
    identity: str
    ephids: frozenset
    epochs: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.epochs)


@dataclass(frozen=True)
class LinkageReport:
    tracks: tuple[Track, ...]

    @property
    def max_track(self) -> int:
        return max((t.length for t in self.tracks), default=0)


def run_linkage_analysis(captures, batches, params: EpochParams) -> LinkageReport:
    """Group captured EphIDs by what published data lets an observer link.

    An observation point is one epoch in which a linked identity was heard.
    A low-cost day seed links every EphID derivable from it, a hybrid window
    seed links the EphIDs of its window, and an unlinkable filter entry only
    confirms a single EphID in a single epoch.
    """
    heard = defaultdict(set)  # ephid -> epochs sighted
    for c in captures:
        if len(c.payload) == crypto.EPHID_LEN:
            heard[c.payload].add(params.epoch_of(c.t))
    linked = defaultdict(lambda: (set(), set()))
    for b in batches:
        if b.design is Design.LOW_COST:
            pub_day = b.publication_time // crypto.SECONDS_PER_DAY
            for seed in b.low_cost_seeds():
                ident = "day:" + seed.bytes.hex()
                for s in crypto.seed_chain(seed, pub_day):
                    for e in crypto.derive_day_ephids(s, params):
                        if e in heard:
                            linked[ident][0].add(e)
                            linked[ident][1].update(heard[e])
        elif b.design is Design.HYBRID:
            for seed in b.hybrid_seeds():
                ident = "window:" + seed.bytes.hex()
                for e in crypto.derive_window_ephids(seed, params):
                    if e in heard:
                        linked[ident][0].add(e)
                        linked[ident][1].update(heard[e])
        elif b.body:
            filt = b.cuckoo_filter()
            for e, epochs in heard.items():
                for i in epochs:
                    if filt.contains(crypto.hash_observation(e, i)):
                        ident = f"epoch:{e.hex()}:{i}"
                        linked[ident][0].add(e)
                        linked[ident][1].add(i)
    tracks = tuple(Track(k, frozenset(v[0]), tuple(sorted(v[1]))) for k, v in sorted(linked.items()))
    return LinkageReport(tracks)


def attribute_tracks(report: LinkageReport, events) -> dict:
    """Longest linked track per broadcaster, using the simulator's ground truth."""
    owner = {}
    for ev in events:
        if ev["kind"] == "broadcast":
            owner[bytes.fromhex(ev["ephid"])] = ev["agent"]
    out = {}
    for t in report.tracks:
        agents = {owner.get(e) for e in t.ephids}
        for a in agents:
            if a is not None:
                out[a] = max(out.get(a, 0), t.length)
    return dict(sorted(out.items()))


def linkage_scenario(design, seed: int = 0) -> Scenario:
    """Patient P and companion Q walk past three antennas over two days; P then uploads."""
    design = Design(design).value
    stops = [  # (start_h, end_h, antenna x)
        (10 + 11 / 60, 10 + 13 / 60, 0),
        (11 + 30 / 60, 11 + 33 / 60, 500),
        (14 + 14 / 60, 14 + 16 / 60, 1000),
        (24 + 9, 24 + 9 + 4 / 60, 0),
        (24 + 9 + 40 / 60, 24 + 9 + 44 / 60, 500),
    ]
    trace_p = [{"start_h": a, "end_h": b, "x": x, "y": 0} for a, b, x in stops]
    trace_q = [{"start_h": a, "end_h": b, "x": x, "y": 1} for a, b, x in stops]
    raw = {
        "name": f"linkage-{design}",
        "seed": seed,
        "duration_h": 48,
        "regions": {"CH": design},
        "agents": [
            {"id": "patient", "design": design, "home": "CH", "trace": trace_p,
             "diagnosis": {"at_h": 40, "contagious_from_h": 0}},
            {"id": "companion", "design": design, "home": "CH", "trace": trace_q},
        ],
        "adversary": {"kind": "linkage", "antennas": [
            {"id": "north", "x": 0, "y": -2}, {"id": "plaza", "x": 500, "y": -2},
            {"id": "station", "x": 1000, "y": -2}]},
    }
    return Scenario.from_dict(raw)


# -- eavesdropping ------------------------------------------------------------


@dataclass(frozen=True)
class EavesdropResult:
    distance: float
    duration: float
    k: int
    n: int
    beacons: int
    per_beacon_p: float
    trials: int
    successes: int
    analytic: float
    verified_trials: int

    @property
    def rate(self) -> float:
        return self.successes / self.trials

    @property
    def stderr(self) -> float:
        return math.sqrt(self.analytic * (1 - self.analytic) / self.trials)

    def agrees(self, sigmas: float = 3.0) -> bool:
        return abs(self.rate - self.analytic) <= sigmas * self.stderr + 1e-12

    def to_dict(self) -> dict:
        return {
            "distance_m": self.distance, "duration_s": self.duration, "k": self.k, "n": self.n,
            "beacons": self.beacons, "per_beacon_p": self.per_beacon_p, "trials": self.trials,
            "successes": self.successes, "rate": self.rate, "analytic": self.analytic,
            "stderr": self.stderr, "within_3se": self.agrees(), "verified_trials": self.verified_trials,
        }


def _round_success(heard: np.ndarray, sizes, k: int) -> np.ndarray:
    ok = np.zeros(heard.shape[0], dtype=bool)
    pos = 0
    for size in sizes:
        ok |= heard[:, pos:pos + size].sum(axis=1) >= k
        pos += size
    return ok


def _verify_with_shares(heard_row: np.ndarray, sizes, params: SharingParams, rng: random.Random) -> bool:
    """Replay one trial with real shares; returns whether the EphID was recovered."""
    ephid = rng.randbytes(crypto.EPHID_LEN)
    pos = 0
    for size in sizes:
        shares = split(ephid, 0, params, rng)
        got = [shares[j] for j in range(size) if heard_row[pos + j]]
        pos += size
        if len(got) >= params.k:
            if reconstruct(got, params.k) != ephid:
                raise RuntimeError("reconstruction returned the wrong EphID")
            return True
    return False


def run_eavesdrop_experiment(distance: float, duration: float, params: SharingParams, trials: int,
                             channel: ChannelModel | None = None, beacon_interval: float = 0.25,
                             seed: int = 0, verify_trials: int = 20, offset: int = 0) -> EavesdropResult:
    """Monte Carlo chance that a listener at `distance` reconstructs an EphID.

    The contact lasts `duration` seconds and starts `offset` beacons into a
    sharing round.  Each beacon is heard independently; a trial succeeds when
    some round delivers at least k shares.  The first `verify_trials` trials
    are replayed with real share splitting and reconstruction.
    """
    channel = channel or ChannelModel()
    p = channel.reception_prob(distance)
    beacons = int(round(duration / beacon_interval))
    sizes = round_layout(beacons, params.n, offset)
    gen = np.random.default_rng(seed)
    vrng = random.Random(f"eavesdrop:{seed}")
    chunk = max(1, 4_000_000 // max(beacons, 1))
    successes, verified, done = 0, 0, 0
    while done < trials:
        m = min(chunk, trials - done)
        heard = gen.random((m, beacons)) < p
        ok = _round_success(heard, sizes, params.k)
        for i in range(min(m, verify_trials - verified)):
            if _verify_with_shares(heard[i], sizes, params, vrng) != bool(ok[i]):
                raise RuntimeError("share replay disagrees with the counting rule")
            verified += 1
        successes += int(ok.sum())
        done += m
    analytic = reception_probability(p, params, beacons, offset)
    return EavesdropResult(distance, duration, params.k, params.n, beacons, p, trials, successes,
                           analytic, verified)
