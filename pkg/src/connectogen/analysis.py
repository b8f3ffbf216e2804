"""Classification metrics, paired/unpaired edge-wise t-tests, and CSV exports.

Sensitivity and F1 are micro-averaged, which makes them identical to accuracy in
single-label multiclass classification; specificity is macro-averaged over
one-vs-rest tallies. Edge tests cover the 4005 upper-triangle region pairs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .data import N_EDGES, N_REGIONS, ConnectivityMatrix
from .errors import ValidationError

DEFAULT_THRESHOLD = 0.05


@dataclass
class ConfusionMatrix:
    """3x3 tallies, rows = true class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.shape != (3, 3):
            raise ValidationError(f"confusion matrix must be 3x3, got {counts.shape}")
        if np.any(counts < 0) or not np.issubdtype(counts.dtype, np.integer):
            counts = counts.astype(np.int64)
            if np.any(counts < 0):
                raise ValidationError("confusion matrix counts must be >= 0")
        self.counts = counts.astype(np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_labels(cls, true_labels, predicted_labels) -> "ConfusionMatrix":
        counts = np.zeros((3, 3), dtype=np.int64)
        for t, p in zip(true_labels, predicted_labels, strict=True):
            counts[int(t), int(p)] += 1
        return cls(counts)


def compute_metrics(cm: ConfusionMatrix) -> dict[str, float]:
    """Accuracy, micro sensitivity, macro specificity, micro F1 — all in percent."""
    counts = cm.counts
    total = cm.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    diag = np.diagonal(counts)
    accuracy = diag.sum() / total

    tp = diag.astype(float)
    fn = counts.sum(axis=1) - diag
    fp = counts.sum(axis=0) - diag
    tn = total - counts.sum(axis=1) - counts.sum(axis=0) + diag

    micro_recall = tp.sum() / (tp.sum() + fn.sum())
    micro_precision = tp.sum() / (tp.sum() + fp.sum())
    micro_f1 = (
        2 * micro_precision * micro_recall / (micro_precision + micro_recall)
        if micro_precision + micro_recall > 0
        else 0.0
    )

    per_class_spec = []
    for c in range(3):
        denom = tn[c] + fp[c]
        per_class_spec.append(tn[c] / denom if denom > 0 else 1.0)
    macro_specificity = float(np.mean(per_class_spec))

    return {
        "accuracy": 100.0 * accuracy,
        "sensitivity": 100.0 * micro_recall,
        "specificity": 100.0 * macro_specificity,
        "f1": 100.0 * micro_f1,
    }


@dataclass
class TestResult:
    t_statistic: float
    p_value: float
    significant: bool


@dataclass
class EdgeTestResult:
    edge: tuple[int, int]
    t_statistic: float
    p_value: float
    significant: bool
    direction: str  # "declined" | "enhanced"
    mean_diff: float

    def __post_init__(self):
        i, j = self.edge
        if not 0 <= i < j < N_REGIONS:
            raise ValidationError(f"edge must satisfy 0 <= i < j < {N_REGIONS}, got {self.edge}")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValidationError(f"p-value out of range: {self.p_value}")
        if self.direction not in ("declined", "enhanced"):
            raise ValidationError(f"bad direction {self.direction!r}")


def paired_t_test(x, y, threshold: float = DEFAULT_THRESHOLD) -> TestResult:
    """Paired-samples t-test with two-sided p from Student-t with n-1 dof.

    Degenerate case sd(d) == 0: p = 1 when mean(d) == 0, else p = 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"x and y must be equal-length vectors, got {x.shape} vs {y.shape}")
    n = x.size
    if n < 2:
        raise ValueError(f"need at least 2 paired samples, got {n}")
    d = x - y
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return TestResult(0.0, 1.0, False)
        return TestResult(math.copysign(math.inf, mean), 0.0, 0.0 < threshold)
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * float(stats.t.sf(abs(t), df=n - 1))
    return TestResult(float(t), p, p < threshold)


def _edge_matrix(group: list[ConnectivityMatrix]) -> np.ndarray:
    iu = np.triu_indices(N_REGIONS, k=1)
    return np.stack([g.weights[iu] for g in group])  # (n, 4005)


def edgewise_comparison(
    group1: list[ConnectivityMatrix],
    group2: list[ConnectivityMatrix],
    paired: bool,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[EdgeTestResult]:
    """Per-edge t-tests over all 4005 region pairs.

    Paired mode runs the paired-samples test on aligned subjects; unpaired mode
    uses the pooled-variance two-sample test. Direction is "declined" when the
    group-1 edge mean exceeds the group-2 edge mean.
    """
    if len(group1) < 2 or len(group2) < 2:
        raise ValueError("need at least 2 matrices per group")
    if paired and len(group1) != len(group2):
        raise ValueError(
            f"paired comparison needs aligned groups, got {len(group1)} vs {len(group2)}"
        )
    v1 = _edge_matrix(group1)
    v2 = _edge_matrix(group2)
    m1 = v1.mean(axis=0)
    m2 = v2.mean(axis=0)

    if paired:
        d = v1 - v2
        n = d.shape[0]
        mean = d.mean(axis=0)
        sd = d.std(axis=0, ddof=1)
        df = n - 1
        with np.errstate(divide="ignore", invalid="ignore"):
            t = mean / (sd / math.sqrt(n))
    else:
        n1, n2 = v1.shape[0], v2.shape[0]
        mean = m1 - m2
        var_pooled = ((n1 - 1) * v1.var(axis=0, ddof=1) + (n2 - 1) * v2.var(axis=0, ddof=1)) / (
            n1 + n2 - 2
        )
        sd = np.sqrt(var_pooled)
        df = n1 + n2 - 2
        with np.errstate(divide="ignore", invalid="ignore"):
            t = mean / (sd * math.sqrt(1.0 / n1 + 1.0 / n2))

    p = 2.0 * stats.t.sf(np.abs(t), df=df)
    degenerate = sd == 0.0
    deg_t = np.where(mean > 0, np.inf, np.where(mean < 0, -np.inf, 0.0))
    t = np.where(degenerate, deg_t, t)
    p = np.where(degenerate, np.where(mean == 0.0, 1.0, 0.0), p)

    iu, ju = np.triu_indices(N_REGIONS, k=1)
    results = []
    for k in range(N_EDGES):
        diff = m1[k] - m2[k]
        results.append(
            EdgeTestResult(
                edge=(int(iu[k]), int(ju[k])),
                t_statistic=float(t[k]),
                p_value=float(p[k]),
                significant=bool(p[k] < threshold),
                direction="declined" if diff > 0 else "enhanced",
                mean_diff=float(diff),
            )
        )
    return results


# --- exports -------------------------------------------------------------------

CHORD_HEADER = ["region_i", "region_j", "mean_diff", "p_value", "direction"]
RADAR_HEADER = ["method", "accuracy", "sensitivity", "specificity", "f1"]


def export_chord_data(results: list[EdgeTestResult], path: str | Path) -> int:
    """Write significant edges as CSV rows (regions 1-indexed); returns row count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [r for r in results if r.significant]
    rows.sort(key=lambda r: r.edge)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CHORD_HEADER)
        for r in rows:
            writer.writerow(
                [r.edge[0] + 1, r.edge[1] + 1, repr(r.mean_diff), repr(r.p_value), r.direction]
            )
    return len(rows)


def load_chord_data(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CHORD_HEADER:
            raise ValidationError(f"unexpected chord header: {reader.fieldnames}")
        out = []
        for row in reader:
            out.append(
                {
                    "region_i": int(row["region_i"]),
                    "region_j": int(row["region_j"]),
                    "mean_diff": float(row["mean_diff"]),
                    "p_value": float(row["p_value"]),
                    "direction": row["direction"],
                }
            )
    return out


def export_radar_data(metrics_by_method: dict[str, dict[str, float]], path: str | Path) -> None:
    """Write one metrics row per method, sorted by method name."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RADAR_HEADER)
        for method in sorted(metrics_by_method):
            m = metrics_by_method[method]
            writer.writerow(
                [method] + [repr(float(m[k])) for k in ("accuracy", "sensitivity", "specificity", "f1")]
            )


def load_radar_data(path: str | Path) -> dict[str, dict[str, float]]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RADAR_HEADER:
            raise ValidationError(f"unexpected radar header: {reader.fieldnames}")
        out = {}
        for row in reader:
            out[row["method"]] = {
                k: float(row[k]) for k in ("accuracy", "sensitivity", "specificity", "f1")
            }
    return out
