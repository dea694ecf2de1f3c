"""Per-day exposure scores and the notification decision."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field


@dataclass(frozen=True)
class ExposureConfig:
    """Bucketed attenuation weighting.

    A match contributes ``weight * epoch_minutes`` where weight comes from the
    first bucket whose ``max_db`` is at least the match attenuation.
    """

    buckets: tuple[tuple[float, float], ...] = ((55.0, 1.0), (63.0, 0.5))
    threshold: float = 15.0
    window_days: int = 14
    epoch_minutes: int = 15

    def __post_init__(self):
        bounds = [b for b, _ in self.buckets]
        if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
            raise ValueError("bucket boundaries must be strictly increasing")
        if any(w < 0 for _, w in self.buckets):
            raise ValueError("bucket weights must be non-negative")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.window_days <= 0 or self.epoch_minutes <= 0:
            raise ValueError("window_days and epoch_minutes must be positive")

    def weight(self, attenuation: float) -> float:
        for max_db, w in self.buckets:
            if attenuation <= max_db:
                return w
        return 0.0

    @classmethod
    def from_dict(cls, raw: dict) -> "ExposureConfig":
        known = {"buckets", "threshold", "window_days", "epoch_minutes"}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown exposure config keys: {sorted(unknown)}")
        kwargs = dict(raw)
        if "buckets" in kwargs:
            try:
                kwargs["buckets"] = tuple((float(b), float(w)) for b, w in kwargs["buckets"])
            except (TypeError, ValueError):
                raise ValueError("buckets must be a list of [max_db, weight] pairs") from None
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExposureConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "buckets": [list(b) for b in self.buckets],
            "threshold": self.threshold,
            "window_days": self.window_days,
            "epoch_minutes": self.epoch_minutes,
        }


@dataclass(frozen=True)
class DailyExposureScore:
    day: int
    score: float


@dataclass(frozen=True)
class Notification:
    notify: bool
    days: tuple[int, ...] = field(default_factory=tuple)


def score_day(matches, cfg: ExposureConfig, day: int | None = None) -> DailyExposureScore:
    matches = list(matches)
    days = {m.day for m in matches}
    if len(days) > 1:
        raise ValueError("matches span more than one day")
    if day is None:
        day = days.pop() if days else 0
    elif days and days != {day}:
        raise ValueError("matches belong to a different day")
    score = sum(cfg.weight(m.exposure_measurement) * cfg.epoch_minutes for m in matches)
    return DailyExposureScore(day, score)


def daily_scores(matches, cfg: ExposureConfig, today: int) -> list[DailyExposureScore]:
    """Scores for each day in the trailing window that has at least one match."""
    by_day = defaultdict(list)
    for m in matches:
        if today - cfg.window_days < m.day <= today:
            by_day[m.day].append(m)
    return [score_day(ms, cfg, d) for d, ms in sorted(by_day.items())]


def decide_notification(scores, cfg: ExposureConfig) -> Notification:
    hot = tuple(sorted(s.day for s in scores if s.score > cfg.threshold))
    return Notification(bool(hot), hot)
