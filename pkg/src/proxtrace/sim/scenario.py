"""Scenario description: agents, regions, channel, optional adversary and sharing.

Scenario files are JSON.  Times inside a scenario are hours relative to
`start` (unix seconds, midnight UTC by default).
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources

from ..crypto import EpochParams
from ..exposure import ExposureConfig
from ..sharing import SharingParams
from ..wire import Design, validate_region
from .channel import ChannelModel

HOUR = 3600.0
DEFAULT_START = 1590969600  # 2020-06-01 00:00 UTC
ADVERSARY_KINDS = ("relay", "linkage", "eavesdrop", "multi_account", "polling")


class ScenarioError(ValueError):
    """Invalid scenario; `field` is a dotted path such as ``agents[1].trace[0].end_h``."""

    def __init__(self, field_path: str, message: str, line: int | None = None):
        self.field = field_path
        self.line = line
        self.message = message
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{field_path}: {message}")


@dataclass(frozen=True)
class Segment:
    start: float  # seconds from scenario start
    end: float
    x: float
    y: float

    def covers(self, t: float) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class Diagnosis:
    at: float
    contagious_from: float
    redact: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class AgentSpec:
    id: str
    design: Design
    home: str
    visited: tuple[str, ...]
    trace: tuple[Segment, ...]
    diagnosis: Diagnosis | None = None
    dummy_mean_days: float = 0.0

    def position(self, t: float):
        for s in self.trace:
            if s.covers(t):
                return s.x, s.y
        return None


@dataclass(frozen=True)
class Antenna:
    id: str
    x: float
    y: float
    start: float = 0.0
    end: float = math.inf


@dataclass(frozen=True)
class AdversaryConfig:
    kind: str
    capture: Antenna | None = None  # relay
    rebroadcast: tuple[float, float] | None = None  # relay
    delay: float = 0.0  # relay, seconds
    antennas: tuple[Antenna, ...] = ()  # linkage
    distance: float = 0.0  # eavesdrop
    duration: float = 0.0  # eavesdrop, seconds
    trials: int = 0  # eavesdrop
    region: str | None = None  # multi_account, polling
    accounts: int = 0  # multi_account
    account_start: float = 0.0
    account_length: float = 0.0
    position: tuple[float, float] = (0.0, 0.0)
    poll_interval: float = 0.0  # polling, seconds


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    start: float
    duration: float
    params: EpochParams
    regions: dict
    agents: tuple[AgentSpec, ...]
    beacon_interval: float = 60.0
    slot_minutes: float = 120.0
    channel: ChannelModel = field(default_factory=ChannelModel)
    exposure: ExposureConfig = field(default_factory=ExposureConfig)
    sharing: SharingParams | None = None
    adversary: AdversaryConfig | None = None
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def end(self) -> float:
        return self.start + self.duration

    def with_seed(self, seed: int) -> "Scenario":
        raw = copy.deepcopy(self.raw)
        raw["seed"] = seed
        return Scenario.from_dict(raw)

    def with_design(self, design) -> "Scenario":
        """Same scenario with every region and agent switched to `design`."""
        design = Design(design).value
        raw = copy.deepcopy(self.raw)
        raw["regions"] = {r: design for r in raw["regions"]}
        for a in raw["agents"]:
            a["design"] = design
        return Scenario.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        return _parse(raw)

    @classmethod
    def loads(cls, text: str) -> "Scenario":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError("<document>", exc.msg, exc.lineno) from None
        try:
            return _parse(raw)
        except ScenarioError as exc:
            if exc.line is None:
                exc = ScenarioError(exc.field, exc.message, _line_of(text, exc.field))
            raise exc from None

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.loads(fh.read())


def bundled_names() -> list[str]:
    files = resources.files("proxtrace.sim").joinpath("scenarios")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_bundled(name: str) -> Scenario:
    path = resources.files("proxtrace.sim").joinpath("scenarios", name + ".json")
    if not path.is_file():
        raise ScenarioError("<name>", f"no bundled scenario {name!r}; have {bundled_names()}")
    return Scenario.loads(path.read_text())


# -- parsing ---------------------------------------------------------------

def _line_of(text: str, path: str) -> int | None:
    """Best-effort line of the last key named in a field path."""
    key = path.split(".")[-1].split("[")[0]
    if not key or key.startswith("<"):
        return None
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


class _Reader:
    def __init__(self, raw, path):
        if not isinstance(raw, dict):
            raise ScenarioError(path or "<document>", "expected an object")
        self.raw, self.path = raw, path

    def sub(self, key):
        return f"{self.path}.{key}" if self.path else key

    def get(self, key, kind, default=..., check=None, why="invalid value"):
        if key not in self.raw:
            if default is ...:
                raise ScenarioError(self.sub(key), "missing required field")
            return default
        v = self.raw[key]
        ok_type = kind is float and isinstance(v, (int, float)) and not isinstance(v, bool)
        ok_type = ok_type or (kind is not float and isinstance(v, kind) and not (kind is int and isinstance(v, bool)))
        if not ok_type:
            raise ScenarioError(self.sub(key), f"expected {kind.__name__}, got {type(v).__name__}")
        if kind is float:
            v = float(v)
            if not math.isfinite(v):
                raise ScenarioError(self.sub(key), "must be finite")
        if check is not None and not check(v):
            raise ScenarioError(self.sub(key), why)
        return v

    def unknown(self, known):
        extra = sorted(set(self.raw) - set(known))
        if extra:
            raise ScenarioError(self.sub(extra[0]), "unknown field")


def _point(v, path):
    if (not isinstance(v, (list, tuple)) or len(v) != 2
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v)):
        raise ScenarioError(path, "expected [x, y]")
    return float(v[0]), float(v[1])


def _design(v, path):
    try:
        return Design(v)
    except ValueError:
        raise ScenarioError(path, f"unknown design {v!r}; use one of {[d.value for d in Design]}") from None


def _trace(a: _Reader, duration: float) -> tuple[Segment, ...]:
    if ("position" in a.raw) == ("trace" in a.raw):
        raise ScenarioError(a.sub("trace"), "give exactly one of position or trace")
    if "position" in a.raw:
        x, y = _point(a.raw["position"], a.sub("position"))
        return (Segment(0.0, duration, x, y),)
    raw = a.raw["trace"]
    if not isinstance(raw, list) or not raw:
        raise ScenarioError(a.sub("trace"), "expected a non-empty list of segments")
    segs = []
    for i, s in enumerate(raw):
        r = _Reader(s, a.sub(f"trace[{i}]"))
        r.unknown({"start_h", "end_h", "x", "y"})
        start = r.get("start_h", float, check=lambda v: v >= 0, why="must be >= 0") * HOUR
        end = r.get("end_h", float) * HOUR
        if end <= start:
            raise ScenarioError(r.sub("end_h"), "must be after start_h")
        if end > duration + 1e-9:
            raise ScenarioError(r.sub("end_h"), "extends past the scenario duration")
        if segs and start < segs[-1].end:
            raise ScenarioError(r.sub("start_h"), "segments must be sorted and non-overlapping")
        segs.append(Segment(start, end, r.get("x", float), r.get("y", float)))
    return tuple(segs)


def _windows(raw, path) -> tuple[tuple[float, float], ...]:
    if not isinstance(raw, list):
        raise ScenarioError(path, "expected a list of [start_h, end_h] pairs")
    out = []
    for i, w in enumerate(raw):
        lo, hi = _point(w, f"{path}[{i}]")
        if hi <= lo:
            raise ScenarioError(f"{path}[{i}]", "interval end must follow its start")
        out.append((lo * HOUR, hi * HOUR))
    return tuple(out)


def _antenna(raw, path, default_id) -> Antenna:
    r = _Reader(raw, path)
    r.unknown({"id", "x", "y", "start_h", "end_h"})
    start = r.get("start_h", float, 0.0) * HOUR
    end = r.get("end_h", float, None)
    end = math.inf if end is None else end * HOUR
    if end <= start:
        raise ScenarioError(r.sub("end_h"), "must be after start_h")
    return Antenna(r.get("id", str, default_id), r.get("x", float), r.get("y", float), start, end)


def _adversary(raw, regions) -> AdversaryConfig:
    r = _Reader(raw, "adversary")
    kind = r.get("kind", str, check=lambda v: v in ADVERSARY_KINDS,
                 why=f"must be one of {list(ADVERSARY_KINDS)}")
    if kind == "relay":
        r.unknown({"kind", "capture", "rebroadcast", "delay_h"})
        if "capture" not in r.raw:
            raise ScenarioError(r.sub("capture"), "missing required field")
        cap = _antenna(r.raw["capture"], r.sub("capture"), "relay-capture")
        if not math.isfinite(cap.end):
            raise ScenarioError(r.sub("capture.end_h"), "relay capture needs an end time")
        if "rebroadcast" not in r.raw:
            raise ScenarioError(r.sub("rebroadcast"), "missing required field")
        return AdversaryConfig(kind, capture=cap, rebroadcast=_point(r.raw["rebroadcast"], r.sub("rebroadcast")),
                               delay=r.get("delay_h", float, check=lambda v: v >= 0, why="must be >= 0") * HOUR)
    if kind == "linkage":
        r.unknown({"kind", "antennas"})
        ants = r.get("antennas", list, check=bool, why="needs at least one antenna")
        return AdversaryConfig(kind, antennas=tuple(
            _antenna(a, r.sub(f"antennas[{i}]"), f"antenna-{i}") for i, a in enumerate(ants)))
    if kind == "eavesdrop":
        r.unknown({"kind", "distance_m", "duration_min", "trials"})
        return AdversaryConfig(
            kind,
            distance=r.get("distance_m", float, check=lambda v: v > 0, why="must be positive"),
            duration=r.get("duration_min", float, check=lambda v: v > 0, why="must be positive") * 60,
            trials=r.get("trials", int, 10000, check=lambda v: v > 0, why="must be positive"),
        )
    region_check = (lambda v: v in regions)
    if kind == "multi_account":
        r.unknown({"kind", "region", "accounts", "start_h", "account_hours", "position"})
        return AdversaryConfig(
            kind,
            region=r.get("region", str, check=region_check, why="unknown region"),
            accounts=r.get("accounts", int, check=lambda v: 0 < v <= 1000, why="must be in 1..1000"),
            account_start=r.get("start_h", float, 0.0) * HOUR,
            account_length=r.get("account_hours", float, check=lambda v: v > 0, why="must be positive") * HOUR,
            position=_point(r.raw.get("position", [0, 0]), r.sub("position")),
        )
    r.unknown({"kind", "region", "interval_h"})
    return AdversaryConfig(
        kind,
        region=r.get("region", str, check=region_check, why="unknown region"),
        poll_interval=r.get("interval_h", float, check=lambda v: v > 0, why="must be positive") * HOUR,
    )


def _parse(raw) -> Scenario:
    top = _Reader(raw, "")
    top.unknown({"name", "seed", "start", "duration_h", "epoch_minutes", "window_minutes", "slot_minutes",
                 "beacon_interval_s", "regions", "agents", "channel", "exposure", "sharing", "adversary"})
    duration = top.get("duration_h", float, check=lambda v: v > 0, why="must be positive") * HOUR
    try:
        params = EpochParams(top.get("epoch_minutes", int, 15), top.get("window_minutes", int, 240))
    except ValueError as exc:
        raise ScenarioError("window_minutes", str(exc)) from None

    regions_raw = top.get("regions", dict, check=bool, why="needs at least one region")
    regions = {}
    for name, d in regions_raw.items():
        try:
            validate_region(name)
        except ValueError as exc:
            raise ScenarioError(f"regions.{name}", str(exc)) from None
        regions[name] = _design(d, f"regions.{name}")

    agents_raw = top.get("agents", list, check=bool, why="needs at least one agent")
    agents, ids = [], set()
    for i, a in enumerate(agents_raw):
        r = _Reader(a, f"agents[{i}]")
        r.unknown({"id", "design", "home", "visited", "position", "trace", "diagnosis", "dummy_mean_days"})
        aid = r.get("id", str, check=bool, why="must be non-empty")
        if aid in ids:
            raise ScenarioError(r.sub("id"), f"duplicate agent id {aid!r}")
        ids.add(aid)
        design = _design(r.get("design", str), r.sub("design"))
        home = r.get("home", str, check=lambda v: v in regions, why="unknown region")
        if regions[home] is not design:
            raise ScenarioError(r.sub("home"), f"region {home} runs {regions[home].value}, agent runs {design.value}")
        visited = r.get("visited", list, [])
        for j, v in enumerate(visited):
            if v not in regions:
                raise ScenarioError(r.sub(f"visited[{j}]"), f"unknown region {v!r}")
        diag = None
        if "diagnosis" in r.raw:
            d = _Reader(r.raw["diagnosis"], r.sub("diagnosis"))
            d.unknown({"at_h", "contagious_from_h", "redact"})
            at = d.get("at_h", float, check=lambda v: 0 <= v * HOUR <= duration, why="must lie inside the scenario") * HOUR
            frm = d.get("contagious_from_h", float, 0.0) * HOUR
            if frm > at:
                raise ScenarioError(d.sub("contagious_from_h"), "must not follow at_h")
            redact = _windows(d.raw.get("redact", []), d.sub("redact"))
            if redact and design is Design.LOW_COST:
                raise ScenarioError(d.sub("redact"), "the low-cost design cannot redact")
            diag = Diagnosis(at, frm, redact)
        agents.append(AgentSpec(
            aid, design, home, tuple(dict.fromkeys([home] + visited)), _trace(r, duration), diag,
            r.get("dummy_mean_days", float, 0.0, check=lambda v: v >= 0, why="must be >= 0"),
        ))

    sharing = None
    if "sharing" in raw:
        s = _Reader(raw["sharing"], "sharing")
        s.unknown({"k", "n"})
        try:
            sharing = SharingParams(s.get("k", int), s.get("n", int))
        except ValueError as exc:
            raise ScenarioError("sharing", str(exc)) from None
    try:
        channel = ChannelModel.from_dict(top.get("channel", dict, {}))
    except (TypeError, ValueError) as exc:
        raise ScenarioError("channel", str(exc)) from None
    try:
        exposure = ExposureConfig.from_dict(top.get("exposure", dict, {}))
    except (TypeError, ValueError) as exc:
        raise ScenarioError("exposure", str(exc)) from None
    if exposure.epoch_minutes != params.epoch_minutes:
        exposure = ExposureConfig(exposure.buckets, exposure.threshold, exposure.window_days, params.epoch_minutes)

    adversary = _adversary(raw["adversary"], regions) if "adversary" in raw else None
    start = top.get("start", float, float(DEFAULT_START))
    if start % 86400:
        raise ScenarioError("start", "must be a UTC midnight (multiple of 86400)")
    return Scenario(
        name=top.get("name", str, "scenario"),
        seed=top.get("seed", int, 0),
        start=start,
        duration=duration,
        params=params,
        regions=regions,
        agents=tuple(agents),
        beacon_interval=top.get("beacon_interval_s", float, 0.25 if sharing else 60.0,
                                check=lambda v: v > 0, why="must be positive"),
        slot_minutes=top.get("slot_minutes", float, 120.0, check=lambda v: v > 0, why="must be positive"),
        channel=channel,
        exposure=exposure,
        sharing=sharing,
        adversary=adversary,
        raw=copy.deepcopy(raw),
    )
