"""Classification and early-recognition metrics for ranked screens.

Ranking convention: descending score, ties broken by original position
(stable sort). AUROC and AUPRC treat tied scores as one threshold; BEDROC
and EF use the stable rank order.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLabels

BEDROC_ALPHA = 80.5
EF_FRACTIONS = (0.005, 0.01, 0.05)
# above this many recall steps AUPRC is rounded once from a ~2^-100 accurate sum
EXACT_AUPRC_STEPS = 4096


def _check(y_true, y_score):
    y = np.asarray(y_true)
    s = np.asarray(y_score, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError(f"labels {y.shape} and scores {s.shape} must be equal-length vectors")
    if y.size == 0:
        raise DegenerateLabels("empty scored set")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    return y.astype(np.int64), s


def rank_order(y_score) -> np.ndarray:
    """Indices sorted by descending score; ties keep input order."""
    return np.argsort(-np.asarray(y_score, dtype=np.float64), kind="stable")


def auroc(y_true, y_score) -> float:
    """Mann-Whitney AUROC; tied positive/negative pairs count one half."""
    y, s = _check(y_true, y_score)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUROC needs at least one positive and one negative")
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    # average (1-based) ranks over tie groups, doubled to stay integral
    _, first, counts = np.unique(sorted_s, return_index=True, return_counts=True)
    twice_rank = np.repeat(2 * first + counts + 1, counts)
    twice_ranks = np.empty(y.size, dtype=np.int64)
    twice_ranks[order] = twice_rank
    twice_u = int(twice_ranks[y == 1].sum()) - n_pos * (n_pos + 1)
    return (twice_u / 2) / (n_pos * n_neg)


def _sweep(y, s):
    """Cumulative (tp, fp) at each distinct threshold, highest first."""
    order = rank_order(s)
    ys = y[order]
    ss = s[order]
    tp = np.cumsum(ys)
    fp = np.cumsum(1 - ys)
    last = np.r_[ss[1:] != ss[:-1], True]
    return tp[last], fp[last]


def auprc(y_true, y_score) -> float:
    """Step-wise area under the precision-recall curve (average precision)."""
    y, s = _check(y_true, y_score)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DegenerateLabels("AUPRC needs at least one positive")
    tp, fp = _sweep(y, s)
    dtp = np.diff(np.r_[0, tp])
    steps = [(int(d) * int(t), int(t) + int(f)) for d, t, f in zip(dtp, tp, fp) if d]
    if len(steps) <= EXACT_AUPRC_STEPS:
        return float(sum(Fraction(num, den) for num, den in steps) / n_pos)
    # hi + lo splits each quotient; the float parts are then summed exactly
    parts = []
    for num, den in steps:
        hi = num / den
        parts.append(hi)
        parts.append(float(Fraction(num - Fraction(hi) * den, den)))
    head = math.fsum(parts)
    tail = math.fsum(parts + [-head])
    return float((Fraction(head) + Fraction(tail)) / n_pos)


def accuracy(y_true, y_score, threshold: float = 0.5) -> float:
    """Fraction correct when ``score >= threshold`` predicts the positive class."""
    y, s = _check(y_true, y_score)
    return float(np.mean((s >= threshold).astype(np.int64) == y))


def _bedroc_from_ranks(ranks, n_total: int, alpha: float) -> float:
    n = len(ranks)
    ra = n / n_total
    sum_exp = float(np.exp(-alpha * np.asarray(ranks, dtype=np.float64) / n_total).sum())
    random_sum = ra * (1.0 - math.exp(-alpha)) / math.expm1(alpha / n_total)
    rie = sum_exp / random_sum
    factor = ra * math.sinh(alpha / 2.0) / (math.cosh(alpha / 2.0) - math.cosh(alpha / 2.0 - alpha * ra))
    return rie * factor + 1.0 / (1.0 - math.exp(alpha * (1.0 - ra)))


def bedroc(y_true, y_score, alpha: float = BEDROC_ALPHA) -> float:
    """Truchon-Bayly BEDROC in [0, 1]."""
    y, s = _check(y_true, y_score)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    n = int(y.sum())
    if n == 0 or n == y.size:
        raise DegenerateLabels("BEDROC needs 0 < actives < total")
    ranks = np.nonzero(y[rank_order(s)])[0] + 1
    return _bedroc_from_ranks(ranks, y.size, alpha)


def bedroc_random_expectation(n_actives: int, n_total: int, alpha: float = BEDROC_ALPHA) -> float:
    """BEDROC of a uniformly random ranking in expectation (RIE averages to 1)."""
    ra = n_actives / n_total
    factor = ra * math.sinh(alpha / 2.0) / (math.cosh(alpha / 2.0) - math.cosh(alpha / 2.0 - alpha * ra))
    return factor + 1.0 / (1.0 - math.exp(alpha * (1.0 - ra)))


def top_count(fraction: float, n_total: int) -> int:
    # round first so that e.g. 0.05 * 1000 does not ceil to 51
    return max(1, math.ceil(round(fraction * n_total, 9)))


def enrichment_factor(y_true, y_score, fraction: float) -> float:
    """(actives in the top ceil(fraction * N) / all actives) / fraction."""
    y, s = _check(y_true, y_score)
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    n = int(y.sum())
    if n == 0:
        raise DegenerateLabels("EF needs at least one active")
    k = top_count(fraction, y.size)
    hits = int(y[rank_order(s)[:k]].sum())
    return (hits / n) / fraction


@dataclass
class MetricReport:
    n: int
    n_pos: int
    auroc: float
    auprc: float
    accuracy: float
    bedroc: float
    bedroc_alpha: float = BEDROC_ALPHA
    ef: dict = field(default_factory=dict)

    COLUMNS = ("n", "n_pos", "auroc", "auroc_pct", "auprc", "auprc_pct", "accuracy",
               "accuracy_pct", "bedroc", "bedroc_pct", "bedroc_alpha",
               "ef_0.5pct", "ef_1pct", "ef_5pct")

    def as_row(self) -> dict:
        row = {"n": self.n, "n_pos": self.n_pos}
        for name in ("auroc", "auprc", "accuracy", "bedroc"):
            value = getattr(self, name)
            row[name] = value
            row[f"{name}_pct"] = 100.0 * value
        row["bedroc_alpha"] = self.bedroc_alpha
        for frac in EF_FRACTIONS:
            row[f"ef_{100 * frac:g}pct"] = self.ef.get(frac, math.nan)
        return row


def _or_nan(fn, *args):
    try:
        return fn(*args)
    except DegenerateLabels:
        return math.nan


def evaluate_scores(y_true, y_score, alpha: float = BEDROC_ALPHA, threshold: float = 0.5) -> MetricReport:
    """All metrics at once; metrics undefined for the label mix are NaN."""
    y, s = _check(y_true, y_score)
    return MetricReport(
        n=int(y.size),
        n_pos=int(y.sum()),
        auroc=_or_nan(auroc, y, s),
        auprc=_or_nan(auprc, y, s),
        accuracy=accuracy(y, s, threshold),
        bedroc=_or_nan(bedroc, y, s, alpha),
        bedroc_alpha=alpha,
        ef={f: _or_nan(enrichment_factor, y, s, f) for f in EF_FRACTIONS},
    )
