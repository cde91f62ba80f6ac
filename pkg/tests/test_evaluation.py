import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from edrl_mea.errors import KeyMismatch, MissingSnrLevel, ValidationError
from edrl_mea.evaluation import (
    EvalReport,
    aggregate_noise,
    build_report,
    f1_binary,
    format_delta,
    percent,
)

LEVELS = (0.0, 5.0, 10.0, 15.0, 20.0)
labels01 = st.lists(st.sampled_from([0, 1]), min_size=1, max_size=60)


def _f1_by_hand(preds, truth, c):
    tp = sum(p == c and t == c for p, t in zip(preds, truth))
    fp = sum(p == c and t != c for p, t in zip(preds, truth))
    fn = sum(p != c and t == c for p, t in zip(preds, truth))
    return Fraction(2 * tp, 2 * tp + fp + fn) if tp + fp + fn else Fraction(0)


# --- F1 ----------------------------------------------------------------------

def test_perfect_predictions():
    assert f1_binary([1, 0, 1], [1, 0, 1]).score == 1.0


def test_hand_computed_confusion():
    r = f1_binary(["P", "P", "N", "N"], ["P", "N", "N", "N"])
    assert r.per_class["P"] == 2 / 3
    assert r.per_class["N"] == 0.8
    assert r.score == pytest.approx(0.7333333333, abs=1e-10)
    assert r.score == (2 / 3 + 0.8) / 2


def test_single_predicted_class_zero_division():
    r = f1_binary([1, 1, 1, 1], [1, 1, 0, 0], labels=[0, 1])
    assert r.per_class[1] == 2 / 3
    assert r.per_class[0] == 0.0
    assert r.score == 1 / 3
    assert r.zero_division == [0]


def test_weighted_and_per_class_modes():
    preds, truth = [1, 1, 0, 0, 0], [1, 0, 0, 0, 0]
    weighted = f1_binary(preds, truth, "WEIGHTED")
    expected = (4 * weighted.per_class[0] + 1 * weighted.per_class[1]) / 5
    assert weighted.score == pytest.approx(expected, abs=1e-15)
    assert f1_binary(preds, truth, "per_class").per_class == weighted.per_class


def test_f1_errors():
    with pytest.raises(ValidationError):
        f1_binary([1], [1, 0])
    with pytest.raises(ValidationError):
        f1_binary([], [])
    with pytest.raises(ValidationError):
        f1_binary([1], [1], "MICRO")


@given(labels01, st.data())
def test_f1_matches_exact_fractions(truth, data):
    preds = data.draw(st.lists(st.sampled_from([0, 1]), min_size=len(truth),
                               max_size=len(truth)))
    r = f1_binary(preds, truth, labels=[0, 1])
    for c in (0, 1):
        assert r.per_class[c] == float(_f1_by_hand(preds, truth, c))


@given(labels01, st.data())
def test_f1_permutation_and_label_swap_invariance(truth, data):
    preds = data.draw(st.lists(st.sampled_from([0, 1]), min_size=len(truth),
                               max_size=len(truth)))
    base = f1_binary(preds, truth, labels=[0, 1]).score
    order = list(range(len(truth)))
    random.Random(len(truth)).shuffle(order)
    assert f1_binary([preds[i] for i in order], [truth[i] for i in order],
                     labels=[0, 1]).score == pytest.approx(base, abs=1e-15)
    swapped = f1_binary([1 - p for p in preds], [1 - t for t in truth], labels=[0, 1]).score
    assert swapped == pytest.approx(base, abs=1e-15)


@given(st.integers(1, 30), st.integers(0, 30))
def test_balanced_symmetric_macro_equals_weighted(n, k):
    k = min(k, n)
    truth = [1] * n + [0] * n
    preds = [0] * k + [1] * (n - k) + [1] * k + [0] * (n - k)
    assert f1_binary(preds, truth, "MACRO").score == pytest.approx(
        f1_binary(preds, truth, "WEIGHTED").score, abs=1e-12)


# --- aggregation -------------------------------------------------------------

def test_aggregate_values():
    assert aggregate_noise(list(zip(LEVELS, [0.7] * 5))) == pytest.approx(0.7, abs=1e-15)
    assert aggregate_noise(list(zip(LEVELS, [50, 52, 54, 56, 58]))) == 54.0


def test_aggregate_missing_level():
    with pytest.raises(MissingSnrLevel):
        aggregate_noise(list(zip(LEVELS[:4], [1, 2, 3, 4])))


@given(st.lists(st.floats(0, 1), min_size=5, max_size=5))
def test_aggregate_is_mean(values):
    assert abs(aggregate_noise(list(zip(LEVELS, values))) - sum(values) / 5) < 1e-12


# --- reports -----------------------------------------------------------------

def _results(offset=0.0, dims=("A", "V")):
    out = {}
    for d in dims:
        out[(d, "CLEAN", None, None)] = 0.777 + offset
        for j, nid in enumerate(["N1", "N2"]):
            for k, lvl in enumerate(LEVELS):
                out[(d, "NOISY", nid, lvl)] = 0.5 + 0.01 * j + 0.02 * k + offset
    return out


def test_delta_formatting():
    assert format_delta(77.7, 80.1) == "(+2.4)"
    assert format_delta(66.7, 66.7) == "(+0.0)"
    assert format_delta(70.0, 68.5) == "(-1.5)"
    assert percent(0.801) == 80.1


def test_report_shape_and_means():
    report = build_report(_results(), _results(0.024))
    csv_rows = report.csv_rows()
    # 2 systems x 2 dims x (1 clean + 2 noises x 5 levels) + 2 x 2 x 2 mean rows
    assert len(csv_rows) == 2 * 2 * 11 + 8
    mean = report.noise_mean("EDRL_MEA", "A", "N2")
    rows = [report.lookup("EDRL_MEA", "A", "NOISY", "N2", lvl) for lvl in LEVELS]
    assert abs(mean - sum(rows) / 5) < 1e-12


def test_report_csv_roundtrip_identical(tmp_path):
    report = build_report(_results(), _results(0.01), title="Intra")
    report.save_csv(tmp_path / "r.csv")
    again = EvalReport.load_csv(tmp_path / "r.csv", title="Intra")
    assert again.to_csv() == report.to_csv()
    assert again.render() == report.render()


def test_tampered_mean_detected():
    text = build_report(_results(), _results()).to_csv()
    lines = text.splitlines()
    i = next(k for k, l in enumerate(lines) if ",mean," in l)
    lines[i] = lines[i].rsplit(",", 1)[0] + ",0.123"
    with pytest.raises(ValidationError):
        EvalReport.from_csv("\n".join(lines) + "\n")


def test_key_mismatch():
    base = _results()
    other = dict(base)
    other.pop(("A", "CLEAN", None, None))
    with pytest.raises(KeyMismatch):
        build_report(base, other)


def test_incomplete_noise_levels_rejected():
    base = _results()
    base.pop(("V", "NOISY", "N1", 10.0))
    with pytest.raises(MissingSnrLevel):
        build_report(base, dict(base))


def test_rendered_table_layout():
    text = build_report(_results(dims=("A",)), _results(0.024, dims=("A",)),
                        title="Intra-corpus performance").render()
    lines = text.splitlines()
    assert lines[0] == "Intra-corpus performance"
    assert "macro" in lines[1]
    clean = next(l for l in lines if l.startswith("Clean"))
    assert "77.7" in clean and "80.1 (+2.4)" in clean
    assert sum(l.startswith("Noisy") for l in lines) == 2


def test_f1_out_of_range_rejected():
    base = _results()
    bad = dict(base)
    bad[("A", "CLEAN", None, None)] = 1.5
    with pytest.raises(ValidationError):
        build_report(base, bad)
