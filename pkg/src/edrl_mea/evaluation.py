"""F1 scoring and clean/noisy report tables (baseline vs EDRL-MEA)."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import KeyMismatch, MissingSnrLevel, NumericalWarning, ValidationError

SNR_LEVELS = (0.0, 5.0, 10.0, 15.0, 20.0)
SYSTEMS = ("BASELINE", "EDRL_MEA")
SYSTEM_TITLES = {"BASELINE": "Baseline", "EDRL_MEA": "EDRL-MEA"}
CSV_FIELDS = ("system", "dimension", "environment", "noise_id", "snr_db", "f1")
MEAN = "mean"


@dataclass
class F1Result:
    averaging: str
    score: float
    per_class: dict
    precision: dict
    recall: dict
    support: dict
    zero_division: list = field(default_factory=list)

    @property
    def macro(self) -> float:
        return float(np.mean(list(self.per_class.values())))


def f1_binary(preds, truth, averaging: str = "MACRO", labels=None) -> F1Result:
    """Per-class precision/recall/F1 from the confusion matrix.

    ``averaging`` picks ``score``: ``MACRO`` (unweighted class mean),
    ``WEIGHTED`` (support-weighted mean) or ``PER_CLASS`` (score is the
    macro value; read ``per_class`` for the individual entries).  A class
    whose precision or recall has a zero denominator gets F1 = 0 and is
    listed in ``zero_division``.
    """
    preds = list(np.asarray(preds).tolist())
    truth = list(np.asarray(truth).tolist())
    if len(preds) != len(truth):
        raise ValidationError(f"length mismatch: {len(preds)} predictions, {len(truth)} labels")
    if not truth:
        raise ValidationError("cannot score an empty prediction list")
    averaging = averaging.upper()
    if averaging not in ("MACRO", "PER_CLASS", "WEIGHTED"):
        raise ValidationError(f"unknown averaging mode {averaging!r}")
    if labels is None:
        labels = sorted(set(preds) | set(truth), key=str)

    per_class, precision, recall, support, flagged = {}, {}, {}, {}, []
    for c in labels:
        tp = sum(p == c and t == c for p, t in zip(preds, truth))
        fp = sum(p == c and t != c for p, t in zip(preds, truth))
        fn = sum(p != c and t == c for p, t in zip(preds, truth))
        support[c] = tp + fn
        if tp + fp == 0 or tp + fn == 0:
            flagged.append(c)
        precision[c] = tp / (tp + fp) if tp + fp else 0.0
        recall[c] = tp / (tp + fn) if tp + fn else 0.0
        denom = 2 * tp + fp + fn
        per_class[c] = 2 * tp / denom if denom else 0.0

    values = np.array([per_class[c] for c in labels])
    if averaging == "WEIGHTED":
        weights = np.array([support[c] for c in labels], dtype=np.float64)
        score = float(values @ weights / weights.sum())
    else:
        score = float(values.mean())
    return F1Result(averaging, score, per_class, precision, recall, support, flagged)


def aggregate_noise(rows, levels=SNR_LEVELS) -> float:
    """Mean F1 over one noise type's SNR rows.

    ``rows`` is an iterable of ``(snr_db, f1)`` pairs (or mappings with
    those keys) that must cover ``levels`` exactly once each.
    """
    by_level = {}
    for row in rows:
        snr, f1 = (row["snr_db"], row["f1"]) if isinstance(row, dict) else row
        snr = float(snr)
        if snr in by_level:
            raise ValidationError(f"duplicate SNR level {snr:g} dB")
        by_level[snr] = float(f1)
    wanted = {float(v) for v in levels}
    missing = sorted(wanted - set(by_level))
    if missing:
        raise MissingSnrLevel(f"missing SNR level(s): {', '.join(f'{m:g}' for m in missing)}")
    extra = sorted(set(by_level) - wanted)
    if extra:
        raise ValidationError(f"unexpected SNR level(s): {extra}")
    return math.fsum(by_level.values()) / len(by_level)


@dataclass(frozen=True)
class ReportRow:
    system: str
    dimension: str
    environment: str
    noise_id: str | None
    snr_db: float | None
    f1: float

    @property
    def condition(self):
        return (self.dimension, self.environment, self.noise_id, self.snr_db)


def _fmt_snr(snr):
    return "" if snr is None else f"{float(snr):g}"


@dataclass
class EvalReport:
    rows: list
    averaging: str = "MACRO"
    levels: tuple = SNR_LEVELS
    title: str = ""

    def dimensions(self):
        return sorted({r.dimension for r in self.rows})

    def noise_ids(self):
        return sorted({r.noise_id for r in self.rows if r.noise_id is not None})

    def lookup(self, system, dimension, environment, noise_id=None, snr_db=None):
        for r in self.rows:
            if (r.system, r.dimension, r.environment, r.noise_id) == \
                    (system, dimension, environment, noise_id) and \
                    (r.snr_db == snr_db or (r.snr_db is not None and snr_db is not None
                                            and float(r.snr_db) == float(snr_db))):
                return r.f1
        raise KeyError((system, dimension, environment, noise_id, snr_db))

    def noise_mean(self, system, dimension, noise_id) -> float:
        rows = [(r.snr_db, r.f1) for r in self.rows
                if (r.system, r.dimension, r.environment, r.noise_id)
                == (system, dimension, "NOISY", noise_id)]
        return aggregate_noise(rows, self.levels)

    def csv_rows(self):
        """Per-condition rows followed, per noise type, by its mean row."""
        out = []
        for r in self.rows:
            out.append([r.system, r.dimension, r.environment, r.noise_id or "",
                        _fmt_snr(r.snr_db), repr(float(r.f1))])
        for system in SYSTEMS:
            for dim in self.dimensions():
                for nid in self.noise_ids():
                    if any(r.system == system and r.dimension == dim and r.noise_id == nid
                           for r in self.rows):
                        out.append([system, dim, "NOISY", nid, MEAN,
                                    repr(self.noise_mean(system, dim, nid))])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        writer.writerows(self.csv_rows())
        return buf.getvalue()

    def save_csv(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str, averaging="MACRO", levels=SNR_LEVELS, title=""):
        rows, means = [], []
        for rec in csv.DictReader(io.StringIO(text)):
            if rec["snr_db"] == MEAN:
                means.append(rec)
                continue
            rows.append(ReportRow(rec["system"], rec["dimension"], rec["environment"],
                                  rec["noise_id"] or None,
                                  float(rec["snr_db"]) if rec["snr_db"] else None,
                                  float(rec["f1"])))
        report = cls(rows, averaging, levels, title)
        for rec in means:
            recomputed = report.noise_mean(rec["system"], rec["dimension"], rec["noise_id"])
            if abs(recomputed - float(rec["f1"])) > 1e-12:
                raise ValidationError(f"stored mean for {rec['noise_id']} disagrees with rows")
        return report

    @classmethod
    def load_csv(cls, path, **kwargs) -> "EvalReport":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"), **kwargs)

    def render(self) -> str:
        return render_table(self)


def percent(f1: float) -> float:
    return round(100.0 * f1, 1)


def format_delta(baseline_pct: float, system_pct: float) -> str:
    """Signed difference of two displayed percentages, one decimal: ``(+2.4)``."""
    delta = round(system_pct - baseline_pct, 1)
    if delta == 0:
        delta = 0.0
    return f"({delta:+.1f})"


def build_report(baseline_results, edrl_mea_results, averaging: str = "MACRO",
                 levels=SNR_LEVELS, title: str = "") -> EvalReport:
    """Pair baseline and EDRL-MEA scores into one report.

    Each results argument maps ``(dimension, environment, noise_id, snr_db)``
    to an F1 in [0, 1].  Both must cover the same conditions.
    """
    base_keys = set(baseline_results)
    sys_keys = set(edrl_mea_results)
    if base_keys != sys_keys:
        raise KeyMismatch(f"conditions differ: only baseline {sorted(base_keys - sys_keys, key=str)}, "
                          f"only system {sorted(sys_keys - base_keys, key=str)}")
    rows = []

    def order(key):
        dim, env, nid, snr = key
        return (dim, env != "CLEAN", nid or "", -1.0 if snr is None else float(snr))

    for system, results in (("BASELINE", baseline_results), ("EDRL_MEA", edrl_mea_results)):
        for key in sorted(results, key=order):
            f1 = float(results[key])
            if not 0.0 <= f1 <= 1.0:
                raise ValidationError(f"F1 {f1} outside [0, 1] for {key}")
            rows.append(ReportRow(system, *key, f1))
    report = EvalReport(rows, averaging.upper(), tuple(levels), title)
    for dim in report.dimensions():
        for nid in report.noise_ids():
            for system in SYSTEMS:
                report.noise_mean(system, dim, nid)  # raises on incomplete SNR coverage
    return report


def render_table(report: EvalReport) -> str:
    """Text table: one row per environment / noise type, Baseline vs EDRL-MEA
    columns per dimension, noisy rows averaged over SNR levels."""
    dims = report.dimensions()
    header_top = ["Environment", "Noise_type"]
    header_sub = ["", ""]
    for d in dims:
        header_top += [d, ""]
        header_sub += [SYSTEM_TITLES["BASELINE"], SYSTEM_TITLES["EDRL_MEA"]]

    def cell_pair(get):
        cells = []
        for d in dims:
            try:
                b, s = percent(get("BASELINE", d)), percent(get("EDRL_MEA", d))
            except KeyError:
                cells += ["-", "-"]
                continue
            cells += [f"{b:.1f}", f"{s:.1f} {format_delta(b, s)}"]
        return cells

    body = []
    if any(r.environment == "CLEAN" for r in report.rows):
        body.append(["Clean", ""] + cell_pair(
            lambda sysname, d: report.lookup(sysname, d, "CLEAN")))
    for nid in report.noise_ids():
        def get(sysname, d, nid=nid):
            try:
                return report.noise_mean(sysname, d, nid)
            except MissingSnrLevel:
                raise KeyError(nid) from None
        body.append(["Noisy", nid] + cell_pair(get))

    table = [header_top, header_sub] + body
    widths = [max(len(r[i]) for r in table) for i in range(len(header_top))]
    lines = []
    if report.title:
        lines.append(report.title)
    lines.append(f"F1 (%), {report.averaging.lower()} average; noisy rows are means over "
                 f"{', '.join(f'{v:g}' for v in report.levels)} dB")
    sep = "-+-".join("-" * w for w in widths)
    for i, row in enumerate(table):
        lines.append(" | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 1:
            lines.append(sep)
    return "\n".join(lines) + "\n"


def warn_zero_division(result: F1Result, context: str = "") -> None:
    if result.zero_division:
        warnings.warn(f"{context}zero-division F1 for class(es) {result.zero_division}",
                      NumericalWarning, stacklevel=2)
