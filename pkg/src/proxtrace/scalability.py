"""Daily download cost per user as a function of new cases per day."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .crypto import MINUTES_PER_DAY, WINDOW_SEED_LEN
from .wire import Design

MB = 2**20
# per-patient record published for the low-cost design; the table-consistent value
LOW_COST_RECORD_BYTES = 32
LOW_COST_RECORD_BYTES_TEXT = 36
FILTER_BYTES_PER_ENTRY = 6.0

# peak and recent daily new cases per country
COUNTRY_CASES = (
    ("Switzerland", 1390, (0.04, 3.82, 0.64)),
    ("Switzerland", 58, (0.00, 0.16, 0.03)),
    ("Germany", 6294, (0.19, 17.29, 2.88)),
    ("Germany", 933, (0.03, 2.56, 0.43)),
    ("France", 7578, (0.23, 20.81, 3.47)),
    ("France", 708, (0.02, 1.94, 0.32)),
    ("Spain", 9181, (0.28, 25.22, 4.20)),
    ("Spain", 849, (0.03, 2.33, 0.39)),
    ("Italy", 6557, (0.20, 18.01, 3.00)),
    ("Italy", 1402, (0.04, 3.85, 0.64)),
)


@dataclass(frozen=True)
class ScalabilityInputs:
    design: Design
    daily_new_cases: int
    contagious_days: int = 5
    epoch_minutes: int = 15
    window_minutes: int = 240
    redacted_hours: float = 0.0
    per_record_bytes: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "design", Design(self.design))
        if self.daily_new_cases <= 0:
            raise ValueError("daily_new_cases must be positive")
        if self.contagious_days <= 0 or self.epoch_minutes <= 0 or self.window_minutes <= 0:
            raise ValueError("durations must be positive")
        if self.redacted_hours < 0 or self.redacted_hours * 60 >= MINUTES_PER_DAY:
            raise ValueError("redacted_hours must lie in [0, 24)")
        if self.per_record_bytes is not None and self.per_record_bytes <= 0:
            raise ValueError("per_record_bytes must be positive")


def seeds_per_patient(inp: ScalabilityInputs) -> int:
    """Hybrid seeds uploaded per patient; redaction removes whole windows every day."""
    windows = MINUTES_PER_DAY // inp.window_minutes
    redacted = int(inp.redacted_hours * 60 // inp.window_minutes)
    return inp.contagious_days * (windows - redacted)


def per_patient_bytes(inp: ScalabilityInputs) -> float:
    if inp.design is Design.LOW_COST:
        return inp.per_record_bytes or LOW_COST_RECORD_BYTES
    if inp.design is Design.UNLINKABLE:
        entries = inp.contagious_days * (MINUTES_PER_DAY // inp.epoch_minutes)
        return entries * (inp.per_record_bytes or FILTER_BYTES_PER_ENTRY)
    return seeds_per_patient(inp) * (inp.per_record_bytes or WINDOW_SEED_LEN)


def daily_download_mb(inp: ScalabilityInputs) -> float:
    return per_patient_bytes(inp) * inp.daily_new_cases / MB


def scalability(inp: ScalabilityInputs) -> dict:
    per = per_patient_bytes(inp)
    total = per * inp.daily_new_cases
    return {
        "design": inp.design.value,
        "daily_new_cases": inp.daily_new_cases,
        "per_patient_bytes": per,
        "daily_bytes": total,
        "daily_mb": round(total / MB, 2),
    }


def country_table(low_cost_record_bytes: int = LOW_COST_RECORD_BYTES) -> list[dict]:
    rows = []
    for country, cases, reference in COUNTRY_CASES:
        row = {"country": country, "cases": cases}
        for design, ref in zip((Design.LOW_COST, Design.UNLINKABLE, Design.HYBRID), reference):
            inp = ScalabilityInputs(
                design, cases,
                per_record_bytes=low_cost_record_bytes if design is Design.LOW_COST else None,
            )
            row[design.value] = round(daily_download_mb(inp), 2)
            row[design.value + "_reference"] = ref
        rows.append(row)
    return rows


def download_curve_rows(max_cases: int = 10000, step: int = 500) -> list[dict]:
    rows = []
    for cases in range(step, max_cases + 1, step):
        rows.append({
            "cases": cases,
            "low_cost": daily_download_mb(ScalabilityInputs(Design.LOW_COST, cases)),
            "unlinkable": daily_download_mb(ScalabilityInputs(Design.UNLINKABLE, cases)),
            "hybrid_4h": daily_download_mb(ScalabilityInputs(Design.HYBRID, cases)),
        })
    return rows


def redaction_curve_rows(max_cases: int = 10000, step: int = 500, reduced_hours: float = 8.0) -> list[dict]:
    rows = []
    for cases in range(step, max_cases + 1, step):
        row = {"cases": cases}
        for w in (120, 240):
            for label, red in (("normal", 0.0), ("reduced", reduced_hours)):
                inp = ScalabilityInputs(Design.HYBRID, cases, window_minutes=w, redacted_hours=red)
                row[f"hybrid_{w // 60}h_{label}"] = daily_download_mb(inp)
        rows.append(row)
    return rows


def to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


# bytes per grouped observation: identifier plus 20 B of metadata
STORAGE_ENTRY_BYTES = {Design.LOW_COST: 36, Design.UNLINKABLE: 52, Design.HYBRID: 36}
# a circulated low-cost figure that 36 B per group cannot produce
LOW_COST_STORAGE_CLAIM_MB = 6.1


def storage_report(groups: int = 140_000) -> list[dict]:
    """Local storage needed to hold `groups` grouped observations, per design."""
    if groups < 0:
        raise ValueError("groups must be non-negative")
    rows = []
    for design, per in STORAGE_ENTRY_BYTES.items():
        total = groups * per
        row = {"design": design.value, "groups": groups, "entry_bytes": per,
               "bytes": total, "mb": round(total / MB, 2), "note": ""}
        if design is Design.LOW_COST:
            row["note"] = (f"claimed {LOW_COST_STORAGE_CLAIM_MB} MB is inconsistent with "
                           f"{per} B/entry; computed {total / MB:.2f} MB")
        rows.append(row)
    return rows
