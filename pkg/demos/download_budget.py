"""How much does every phone download per day, and how much does it store?

Prints the per-country comparison of the three designs, the effect of
redacting night-time windows, and what a cuckoo filter must cost for a
given false-positive budget.
"""

from proxtrace import cuckoo
from proxtrace.scalability import ScalabilityInputs, per_patient_bytes, storage_report, country_table
from proxtrace.wire import Design

print(f"{'country':<12}{'cases':>7}{'low-cost':>10}{'unlinkable':>12}{'hybrid':>8}   (MB per day)")
for r in country_table():
    print(f"{r['country']:<12}{r['cases']:>7}{r['low_cost']:>10.2f}{r['unlinkable']:>12.2f}{r['hybrid']:>8.2f}")

print()
for window in (240, 120):
    full = per_patient_bytes(ScalabilityInputs(Design.HYBRID, 1, window_minutes=window))
    night = per_patient_bytes(ScalabilityInputs(Design.HYBRID, 1, window_minutes=window, redacted_hours=8))
    print(f"hybrid {window // 60} h windows: {full:.0f} B per patient, {night:.0f} B with 8 h redacted")

print()
for row in storage_report():
    note = f"  ({row['note']})" if row["note"] else ""
    print(f"{row['design']:<11} stores 140k groups in {row['mb']:.2f} MB{note}")

print()
queries = cuckoo.default_query_volume()
for target in (1e-2, 1e-6):
    f, buckets, b = cuckoo.tune(cuckoo.FilterTuning(480, target, queries))
    per_item = cuckoo.body_len(buckets * b, f) / 480
    print(f"false-positive budget {target:g} over five years: f={f} bits, {per_item:.2f} B per entry")
