"""ROC curves, AUC and histograms, plus their text file formats."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, UsageError


@dataclass(frozen=True, eq=False)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray   # thresholds[k] produced point k; +inf for (0, 0)
    auc: float
    label: str = ""


def roc(scores, is_target, label="") -> RocCurve:
    """Threshold sweep over every distinct score, highest first.

    A probe is called "target" when its score is ``>=`` the threshold, so
    tied scores enter the curve together.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(is_target, dtype=bool).ravel()
    if s.shape != y.shape:
        raise UsageError(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise UsageError("scores must be finite")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UsageError("ROC needs at least one target and one non-target")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each group of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    fp = np.cumsum(~y)[ends]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    return RocCurve(fpr, tpr, thresholds, auc_from_points(fpr, tpr), label)


def auc_from_points(fpr, tpr) -> float:
    fpr, tpr = np.asarray(fpr, dtype=np.float64), np.asarray(tpr, dtype=np.float64)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the stored curve points."""
    return auc_from_points(curve.fpr, curve.tpr)


def histogram(values, bins: int = 20, value_range=None):
    """Equal-width histogram over ``[min, max]``; returns ``(edges, counts)``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise UsageError("histogram needs at least one value")
    if bins < 1:
        raise UsageError("bins must be >= 1")
    counts, edges = np.histogram(v, bins=bins, range=value_range)
    return edges, counts


# ---------------------------------------------------------------------------
# text formats
# ---------------------------------------------------------------------------

def format_curve(curve: RocCurve) -> str:
    lines = [f"# roc {curve.label}".rstrip(), "# fpr tpr"]
    lines += [f"{f!r} {t!r}" for f, t in zip(curve.fpr.tolist(), curve.tpr.tolist())]
    lines.append(f"# AUC={curve.auc!r}")
    return "\n".join(lines) + "\n"


def parse_curve(text: str, label="") -> RocCurve:
    pts, auc_val = [], None
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith("# AUC="):
                auc_val = float(line[6:])
            elif line.startswith("# roc ") and not label:
                label = line[6:]
            continue
        a, b = line.split()
        pts.append((float(a), float(b)))
    if not pts:
        raise DataError("curve file has no points")
    fpr, tpr = np.array(pts).T
    return RocCurve(fpr, tpr, np.full(len(fpr), np.nan),
                    auc_from_points(fpr, tpr) if auc_val is None else auc_val, label)


def format_histogram(edges, counts, label="") -> str:
    lines = [f"# histogram {label}".rstrip(), "# left_edge right_edge count"]
    lines += [f"{lo!r} {hi!r} {int(c)}" for lo, hi, c in zip(edges[:-1].tolist(), edges[1:].tolist(), counts)]
    return "\n".join(lines) + "\n"


def parse_histogram(text: str):
    rows = [l.split() for l in text.splitlines() if l.strip() and not l.startswith("#")]
    if not rows:
        raise DataError("histogram file has no bins")
    lo = np.array([float(r[0]) for r in rows])
    hi = np.array([float(r[1]) for r in rows])
    counts = np.array([int(r[2]) for r in rows])
    return np.r_[lo, hi[-1]], counts
