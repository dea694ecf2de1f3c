import pytest

from proxtrace.scalability import (
    MB,
    COUNTRY_CASES,
    ScalabilityInputs,
    daily_download_mb,
    download_curve_rows,
    redaction_curve_rows,
    per_patient_bytes,
    scalability,
    seeds_per_patient,
    country_table,
    to_csv,
)
from proxtrace.wire import Design


def test_all_thirty_cells():
    rows = country_table()
    assert len(rows) == 10
    for row in rows:
        for d in ("low_cost", "unlinkable", "hybrid"):
            assert abs(row[d] - row[d + "_reference"]) <= 0.01, (row["country"], row["cases"], d)


def test_thirty_cells_from_independent_arithmetic():
    # bytes per patient, straight from the design arithmetic
    per = {"low_cost": 32, "unlinkable": 5 * 96 * 6, "hybrid": 5 * 6 * 16}
    for _, cases, ref in COUNTRY_CASES:
        for d, r in zip(("low_cost", "unlinkable", "hybrid"), ref):
            assert abs(round(per[d] * cases / 2**20, 2) - r) <= 0.01


def test_text_record_size_breaks_the_table():
    rows = country_table(36)
    assert any(abs(r["low_cost"] - r["low_cost_reference"]) > 0.005 for r in rows)


def test_per_patient_constants():
    assert per_patient_bytes(ScalabilityInputs(Design.LOW_COST, 1)) == 32
    assert per_patient_bytes(ScalabilityInputs(Design.UNLINKABLE, 1)) == 2880
    assert per_patient_bytes(ScalabilityInputs(Design.HYBRID, 1)) == 480


def test_reduced_mode():
    four = ScalabilityInputs(Design.HYBRID, 1, redacted_hours=8)
    two = ScalabilityInputs(Design.HYBRID, 1, window_minutes=120, redacted_hours=8)
    assert seeds_per_patient(four) == 20 and per_patient_bytes(four) == 320
    assert seeds_per_patient(two) == 40 and per_patient_bytes(two) == 640


def test_examples():
    assert round(daily_download_mb(ScalabilityInputs(Design.UNLINKABLE, 1390)), 2) == 3.82
    assert scalability(ScalabilityInputs(Design.HYBRID, 6294))["daily_mb"] == 2.88
    assert MB == 1 << 20


def test_linear_in_cases():
    a = daily_download_mb(ScalabilityInputs(Design.HYBRID, 1000))
    assert daily_download_mb(ScalabilityInputs(Design.HYBRID, 3000)) == pytest.approx(3 * a)


@pytest.mark.parametrize("kw", [
    dict(daily_new_cases=0), dict(daily_new_cases=-5), dict(daily_new_cases=1, contagious_days=0),
    dict(daily_new_cases=1, redacted_hours=24), dict(daily_new_cases=1, redacted_hours=-1),
    dict(daily_new_cases=1, per_record_bytes=0),
])
def test_invalid_inputs(kw):
    with pytest.raises(ValueError):
        ScalabilityInputs(Design.HYBRID, **kw)


def test_plot_data():
    dc = download_curve_rows()
    assert len(dc) == 20 and dc[0]["cases"] == 500
    sh = redaction_curve_rows()
    assert sh[0]["hybrid_4h_reduced"] == pytest.approx(500 * 320 / MB)
    assert sh[0]["hybrid_2h_reduced"] == pytest.approx(500 * 640 / MB)
    text = to_csv(dc)
    assert text.splitlines()[0] == "cases,low_cost,unlinkable,hybrid_4h"
    assert to_csv([]) == ""
