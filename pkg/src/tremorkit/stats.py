"""Evaluation metrics and hypothesis tests.

Agreement is measured with linearly weighted Cohen's kappa and balanced
accuracy; binary severity splits use ROC/AUC with Mann-Whitney tie
handling; model and treatment comparisons use exact one-sided binomial and
Wilcoxon signed-rank tests with uncapped Bonferroni correction.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

# The three binary severity splits: threshold t means {<=t-1} vs {>=t}.
BINARY_SPLITS = ((1, "0 vs 1-4"), (2, "0-1 vs 2-4"), (3, "0-2 vs 3-4"))


class DegenerateMarginalsWarning(UserWarning):
    pass


class OneClassOnly(ValueError):
    pass


class AllZeroDifferences(ValueError):
    pass


class BaselineZero(ValueError):
    pass


@dataclass
class TestResult:
    statistic: float
    p_value: float
    corrected_p: float | None = None
    significance: str | None = None
    label: str = ""
    n: int = 0
    extra: dict = field(default_factory=dict)


def confusion_matrix(truth, pred, k: int) -> np.ndarray:
    """k x k counts; rows = clinician (truth), columns = model (pred)."""
    truth = np.asarray(truth, dtype=int)
    pred = np.asarray(pred, dtype=int)
    if truth.shape != pred.shape:
        raise ValueError("truth and pred must have equal length")
    if ((truth < 0) | (truth >= k) | (pred < 0) | (pred >= k)).any():
        raise ValueError(f"labels must lie in 0..{k - 1}")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def weighted_kappa(cm: np.ndarray) -> float:
    """Linearly weighted Cohen's kappa: 1 - sum(w*O) / sum(w*E)."""
    cm = np.asarray(cm, dtype=np.float64)
    k = cm.shape[0]
    n = cm.sum()
    if n < 1:
        raise ValueError("confusion matrix is empty")
    i, j = np.indices((k, k))
    w = np.abs(i - j) / (k - 1) if k > 1 else np.zeros((1, 1))
    expected = np.outer(cm.sum(axis=1), cm.sum(axis=0)) / n
    denom = (w * expected).sum()
    if denom == 0:
        warnings.warn("both raters constant and identical; kappa undefined, "
                      "returning 1.0", DegenerateMarginalsWarning)
        return 1.0
    return float(1.0 - (w * cm).sum() / denom)


def balanced_accuracy(cm: np.ndarray) -> float:
    """Mean per-class recall over classes present in the truth."""
    cm = np.asarray(cm, dtype=np.float64)
    row_totals = cm.sum(axis=1)
    mask = row_totals > 0
    recalls = np.diag(cm)[mask] / row_totals[mask]
    return float(recalls.mean())


@dataclass
class ROCCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_auc(scores, labels) -> ROCCurve:
    """Threshold sweep over unique scores; trapezoidal AUC.

    Equivalent to Mann-Whitney U / (n+ * n-) with half credit for ties.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("need both positive and negative labels")

    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    # cumulative counts at each distinct threshold (predict positive if >= thr)
    distinct = np.nonzero(np.diff(s))[0]
    cut = np.concatenate([distinct, [len(s) - 1]])
    tp = np.cumsum(y == 1)[cut]
    fp = np.cumsum(y == 0)[cut]
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    thresholds = np.concatenate([[np.inf], s[cut]])
    auc = float(np.trapz(tpr, fpr))
    return ROCCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=auc)


def sensitivity_at_specificity(curve: ROCCurve, spec_anchor: float = 0.95) -> float:
    """Highest TPR among operating points with FPR <= 1 - spec_anchor."""
    ok = curve.fpr <= (1.0 - spec_anchor) + 1e-12
    return float(curve.tpr[ok].max()) if ok.any() else 0.0


def binomial_test_one_sided(successes: int, trials: int, p0: float = 0.5) -> TestResult:
    """Exact upper-tail binomial test: P(X >= successes | trials, p0)."""
    if not 0 <= successes <= trials:
        raise ValueError("need 0 <= successes <= trials")
    p = sum(math.comb(trials, i) * p0 ** i * (1 - p0) ** (trials - i)
            for i in range(successes, trials + 1))
    return TestResult(statistic=float(successes), p_value=min(1.0, float(p)), n=trials)


# ------------------------------------------------------------------ wilcoxon

EXACT_WILCOXON_MAX_N = 25


def _signed_rank_sums(x, y):
    d = np.asarray(y, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise AllZeroDifferences("all paired differences are zero")
    absd = np.abs(d)
    order = np.argsort(absd, kind="stable")
    ranks = np.empty(n, dtype=np.float64)
    sorted_abs = absd[order]
    i = 0
    r = 1
    while i < n:
        j = i
        while j + 1 < n and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i:j + 1]] = (r + (r + (j - i))) / 2.0   # average tied ranks
        r += j - i + 1
        i = j + 1
    w_plus = float(ranks[d > 0].sum())
    return d, ranks, w_plus


def _exact_wplus_distribution(ranks) -> tuple[np.ndarray, int]:
    """Counts of 2*W+ values over all sign assignments (ranks doubled to ints)."""
    scaled = np.round(np.asarray(ranks) * 2).astype(int)
    total = int(scaled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for s in scaled:
        shifted = np.zeros_like(counts)
        shifted[s:] = counts[:len(counts) - s]
        counts = counts + shifted
    return counts, total


def wilcoxon_signed_rank(x, y, alternative: str = "greater") -> TestResult:
    """Wilcoxon signed-rank test on paired samples, testing y against x.

    Zero differences are dropped and tied ranks averaged. Exact p by
    distribution of W+ over sign assignments for n <= 25, else a normal
    approximation with tie and continuity corrections. ``greater`` tests the
    alternative that y exceeds x. The reported statistic is the rank sum of
    the differences opposing the alternative (min of the two for two_sided).
    """
    if alternative not in ("greater", "two_sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d, ranks, w_plus = _signed_rank_sums(x, y)
    n = len(d)
    total = float(ranks.sum())
    w_minus = total - w_plus

    if n <= EXACT_WILCOXON_MAX_N:
        counts, scaled_total = _exact_wplus_distribution(ranks)
        denom = 2.0 ** n
        w2 = int(round(w_plus * 2))
        if alternative == "greater":
            p = counts[w2:].sum() / denom
        else:
            lo = min(w2, scaled_total - w2)
            hi = scaled_total - lo
            p = (counts[:lo + 1].sum() + counts[hi:].sum()) / denom
    else:
        mean = total / 2.0
        _, tie_counts = np.unique(ranks, return_counts=True)
        var = n * (n + 1) * (2 * n + 1) / 24.0 - ((tie_counts ** 3 - tie_counts).sum()) / 48.0
        sd = math.sqrt(var)
        if alternative == "greater":
            z = (w_plus - mean - 0.5) / sd
            p = 0.5 * math.erfc(z / math.sqrt(2.0))
        else:
            z = (abs(w_plus - mean) - 0.5) / sd
            p = math.erfc(z / math.sqrt(2.0))

    stat = w_minus if alternative == "greater" else min(w_plus, w_minus)
    return TestResult(statistic=float(stat), p_value=float(min(1.0, p)), n=n,
                      extra={"w_plus": w_plus, "w_minus": w_minus})


def bonferroni(results, n_comparisons: int = 9):
    """Multiply p-values by the comparison count, deliberately uncapped,
    and tag significance on the corrected values."""
    for r in results:
        r.corrected_p = n_comparisons * r.p_value
        if r.corrected_p < 0.001:
            r.significance = "***"
        elif r.corrected_p < 0.01:
            r.significance = "**"
        elif r.corrected_p < 0.05:
            r.significance = "*"
        else:
            r.significance = "ns"
    return results


def asymmetry_label(left_score: int, right_score: int) -> str:
    """Direction of lateral asymmetry: right lower, equal, or higher."""
    for s in (left_score, right_score):
        if s not in (0, 1, 2, 3, 4):
            raise ValueError(f"score must be 0..4, got {s}")
    if right_score < left_score:
        return "R<L"
    if right_score > left_score:
        return "R>L"
    return "R=L"


ASYMMETRY_CLASSES = ("R<L", "R=L", "R>L")


def treatment_improvement(baseline: float, treated: float) -> float:
    """Relative severity improvement; inclusion needs baseline tremor."""
    if baseline < 1:
        raise BaselineZero("baseline score must be at least 1")
    return (baseline - treated) / baseline
