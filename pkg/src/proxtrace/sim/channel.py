from __future__ import annotations

import math
from dataclasses import dataclass

MIN_DISTANCE = 0.1


@dataclass(frozen=True)
class ChannelModel:
    """Log-distance path loss with a logistic per-beacon reception curve.

    attenuation(d) = ref_db + 10 * exponent * log10(d) and
    reception_prob(d) = 1 / (1 + exp((attenuation(d) - midpoint_db) / scale_db)),
    zero beyond `max_range`.
    """

    ref_db: float = 40.0
    exponent: float = 2.0
    midpoint_db: float = 59.03089986991944
    scale_db: float = 2.2990366279823755
    max_range: float = 100.0

    @classmethod
    def calibrated(cls, near=(5.0, 0.9), far=(16.0, 0.1), ref_db=40.0, exponent=2.0,
                   max_range=100.0) -> "ChannelModel":
        """Fit the logistic so that reception_prob hits the two (distance, p) anchors."""
        (d1, p1), (d2, p2) = near, far
        if not (d1 < d2 and 0 < p2 < p1 < 1):
            raise ValueError("anchors must satisfy d1 < d2 and p1 > p2")
        a1 = ref_db + 10 * exponent * math.log10(d1)
        a2 = ref_db + 10 * exponent * math.log10(d2)
        l1, l2 = math.log(1 / p1 - 1), math.log(1 / p2 - 1)
        scale = (a2 - a1) / (l2 - l1)
        midpoint = a1 - scale * l1
        return cls(ref_db, exponent, midpoint, scale, max_range)

    def attenuation(self, distance: float) -> float:
        return self.ref_db + 10 * self.exponent * math.log10(max(distance, MIN_DISTANCE))

    def reception_prob(self, distance: float) -> float:
        if distance > self.max_range:
            return 0.0
        z = (self.attenuation(distance) - self.midpoint_db) / self.scale_db
        if z > 700:
            return 0.0
        return 1.0 / (1.0 + math.exp(z))

    @classmethod
    def from_dict(cls, raw: dict) -> "ChannelModel":
        raw = dict(raw)
        if "near" in raw or "far" in raw:
            near = tuple(raw.pop("near", (5.0, 0.9)))
            far = tuple(raw.pop("far", (16.0, 0.1)))
            return cls.calibrated(near, far, **raw)
        return cls(**raw)
