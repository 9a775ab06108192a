"""Per-interval detection metrics, CSV serialization, run aggregation.

The metrics CSV is the stable exchange format between the simulator and
downstream tooling: fixed column order, floats rendered with %.9g, UTF-8,
LF line endings. Aggregation excludes a warm-up window and reports
mean +/- sample standard deviation across seeds.
"""

from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, fields
from typing import Iterable, Optional, Sequence

METRICS_COLUMNS = [
    "run_id", "seed", "interval_index", "mode",
    "accuracy", "precision", "recall",
    "mean_residual_energy_J", "pdr_cumulative",
    "flagged_count", "excluded_count", "isolated_count",
    "false_positive_count",
]

_FLOAT_COLUMNS = {"accuracy", "precision", "recall",
                  "mean_residual_energy_J", "pdr_cumulative"}
_INT_COLUMNS = {"seed", "interval_index", "flagged_count", "excluded_count",
                "isolated_count", "false_positive_count"}


@dataclass(frozen=True)
class MetricsRow:
    run_id: str
    seed: int
    interval_index: int
    mode: str
    accuracy: float
    precision: float
    recall: float
    mean_residual_energy_J: float
    pdr_cumulative: float
    flagged_count: int
    excluded_count: int
    isolated_count: int
    false_positive_count: int


assert [f.name for f in fields(MetricsRow)] == METRICS_COLUMNS


@dataclass(frozen=True)
class Confusion:
    tp: int   # attack predicted attack
    fp: int   # benign predicted attack
    tn: int
    fn: int

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp,
                         self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def classify(predicted_attack: Iterable[int], actual_attack: Iterable[int],
             population: Sequence[int]) -> Confusion:
    pred = set(predicted_attack)
    actual = set(actual_attack)
    tp = fp = tn = fn = 0
    for aid in population:
        p, a = aid in pred, aid in actual
        if p and a:
            tp += 1
        elif p:
            fp += 1
        elif a:
            fn += 1
        else:
            tn += 1
    return Confusion(tp, fp, tn, fn)


def accuracy(c: Confusion) -> float:
    return (c.tp + c.tn) / c.total if c.total else 1.0


def precision(c: Confusion) -> float:
    """Attack-class precision; nothing flagged counts as fully precise."""
    return c.tp / (c.tp + c.fp) if (c.tp + c.fp) else 1.0


def recall(c: Confusion) -> float:
    """Attack-class recall; vacuously perfect with no attackers present."""
    return c.tp / (c.tp + c.fn) if (c.tp + c.fn) else 1.0


def balanced_accuracy(c: Confusion) -> float:
    """Mean of attack recall and benign recall.

    Insensitive to the benign/attack imbalance (attackers are a small
    minority), so a detector that flags nothing scores 0.5, not 0.85.
    """
    tpr = c.tp / (c.tp + c.fn) if (c.tp + c.fn) else 1.0
    tnr = c.tn / (c.tn + c.fp) if (c.tn + c.fp) else 1.0
    return 0.5 * (tpr + tnr)


# ------------------------------------------------------------- CSV plumbing


def _fmt(value: object, column: str) -> str:
    if column in _FLOAT_COLUMNS:
        return "%.9g" % float(value)
    if column in _INT_COLUMNS:
        return str(int(value))
    return str(value)


def write_metrics_csv(path, rows: Iterable[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(getattr(row, c), c) for c in METRICS_COLUMNS])


def read_metrics_csv(path) -> list[MetricsRow]:
    rows: list[MetricsRow] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            kwargs = {}
            for col in METRICS_COLUMNS:
                raw = rec[col]
                if col in _FLOAT_COLUMNS:
                    kwargs[col] = float(raw)
                elif col in _INT_COLUMNS:
                    kwargs[col] = int(raw)
                else:
                    kwargs[col] = raw
            rows.append(MetricsRow(**kwargs))
    return rows


# -------------------------------------------------------------- aggregation


@dataclass(frozen=True)
class Stat:
    mean: float
    std: float      # sample std; 0 for a single observation
    n: int

    def as_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "n": self.n}


def stat(values: Sequence[float]) -> Stat:
    vals = [float(v) for v in values]
    if not vals:
        return Stat(float("nan"), float("nan"), 0)
    mean = statistics.fmean(vals)
    std = statistics.stdev(vals) if len(vals) > 1 else 0.0
    return Stat(mean, std, len(vals))


def median_or_inf(values: Sequence[float]) -> float:
    """Median with empty input mapping to +inf so orderings stay total."""
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return float("inf")
    return float(statistics.median(finite))


def pooled_confusion(per_interval: Sequence[Confusion],
                     warmup_intervals: int) -> Confusion:
    """Sum interval confusions, skipping the warm-up prefix by list index."""
    out = Confusion(0, 0, 0, 0)
    for k, c in enumerate(per_interval):
        if k < warmup_intervals:
            continue
        out = out + c
    return out


def post_warmup(rows: Sequence[MetricsRow], warmup_intervals: int) -> list[MetricsRow]:
    return [r for r in rows if r.interval_index >= warmup_intervals]
