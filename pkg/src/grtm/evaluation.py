"""Train/test link splits and ROC / precision-recall evaluation."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from grtm.errors import ContractError
from grtm.model import LinkSet


class RecallNotReachedWarning(UserWarning):
    """Requested recall exceeds the highest recall the ranking achieves."""


@dataclass(frozen=True)
class SplitResult:
    train: LinkSet
    test: LinkSet


@dataclass
class Curve:
    """Curve points with the score threshold that produced each point."""

    thresholds: np.ndarray
    x: np.ndarray
    y: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.x.tolist(), self.y.tolist()))


@dataclass
class EvalReport:
    roc: Curve
    pr: Curve
    precision_at: dict = field(default_factory=dict)
    n_positive: int = 0
    n_negative: int = 0

    @property
    def roc_points(self):
        return self.roc.points

    @property
    def pr_points(self):
        return self.pr.points

    @property
    def roc_auc(self):
        return self.roc.auc

    @property
    def pr_auc(self):
        return self.pr.auc


def split_links(links, train_ratio=0.6, seed=0):
    """Uniformly random partition with round(ratio * |links|) training links."""
    if len(links) < 2:
        raise ContractError(f"need at least 2 links to split, got {len(links)}")
    if not 0 < train_ratio < 1:
        raise ContractError(f"train_ratio must lie in (0, 1), got {train_ratio}")
    edges = list(links)
    n_train = int(math.floor(train_ratio * len(edges) + 0.5))
    perm = np.random.default_rng(seed).permutation(len(edges))
    train = LinkSet(edges[i] for i in perm[:n_train])
    test = LinkSet(edges[i] for i in perm[n_train:])
    return SplitResult(train, test)


def evaluation_universe(n_users, train):
    """All pairs u < v that are not training links, in lexicographic order."""
    return [(u, v) for u in range(n_users) for v in range(u + 1, n_users) if (u, v) not in train]


def _labelled(scores, positives):
    pairs = sorted(scores)
    s = np.array([scores[p] for p in pairs], dtype=np.float64)
    y = np.array([p in positives for p in pairs], dtype=bool)
    if not np.all(np.isfinite(s)):
        raise ContractError("scores must be finite")
    return s, y


def _sweep(s, y):
    """Cumulative (tp, fp) at each distinct threshold, highest first."""
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    return s[last], tp, fp


def _trapezoid(x, y):
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def roc_curve(scores, positives):
    """ROC curve of ``scores`` (dict pair -> score) against ``positives``.

    Pairs sharing a score enter together at one threshold. Returns a
    :class:`Curve` starting at (0, 0) and ending at (1, 1).
    """
    s, y = _labelled(scores, positives)
    P, Nn = int(y.sum()), int((~y).sum())
    if P == 0 or Nn == 0:
        raise ContractError(f"ROC needs positives and negatives, got {P} and {Nn}")
    thr, tp, fp = _sweep(s, y)
    fpr = np.r_[0.0, fp / Nn]
    tpr = np.r_[0.0, tp / P]
    return Curve(np.r_[np.inf, thr], fpr, tpr, _trapezoid(fpr, tpr))


def pr_curve(scores, positives):
    """Precision-recall curve; x is recall and y precision.

    The first point sits at recall 0 with the precision of the top
    threshold. The area is the trapezoid over recall.
    """
    s, y = _labelled(scores, positives)
    P = int(y.sum())
    if P == 0:
        raise ContractError("precision-recall needs at least one positive")
    thr, tp, fp = _sweep(s, y)
    recall = tp / P
    precision = tp / (tp + fp)
    recall = np.r_[0.0, recall]
    precision = np.r_[precision[0], precision]
    return Curve(np.r_[thr[0], thr], recall, precision, _trapezoid(recall, precision))


def precision_at_recall(pr_points, r):
    """Precision at the smallest achieved recall that is >= ``r``.

    ``pr_points`` is a :class:`Curve` or a sequence of (recall, precision).
    When ``r`` exceeds every achieved recall the precision at the maximum
    recall is returned and :class:`RecallNotReachedWarning` is issued.
    """
    if not 0 <= r <= 1:
        raise ContractError(f"recall level must lie in [0, 1], got {r}")
    if isinstance(pr_points, Curve):
        recall, precision = pr_points.x, pr_points.y
    else:
        arr = np.asarray(pr_points, dtype=np.float64).reshape(-1, 2)
        recall, precision = arr[:, 0], arr[:, 1]
    reached = np.nonzero(recall >= r)[0]
    if reached.size == 0:
        best = int(np.argmax(recall))
        warnings.warn(
            f"recall {r} not reached (max {recall[best]}); using precision at max recall",
            RecallNotReachedWarning,
            stacklevel=2,
        )
        return float(precision[best])
    # Among points at the smallest qualifying recall take the earliest one.
    rmin = recall[reached].min()
    idx = reached[recall[reached] == rmin][0]
    return float(precision[idx])


def evaluate(scores, split, n_users, recall_levels=(0.1,)):
    """Score the test links against every other non-training pair."""
    universe = evaluation_universe(n_users, split.train)
    missing = [p for p in universe if p not in scores]
    if missing:
        raise ContractError(f"{len(missing)} universe pairs have no score, e.g. {missing[0]}")
    scoped = {p: scores[p] for p in universe}
    roc = roc_curve(scoped, split.test)
    pr = pr_curve(scoped, split.test)
    n_pos = sum(1 for p in universe if p in split.test)
    return EvalReport(
        roc,
        pr,
        {r: precision_at_recall(pr, r) for r in recall_levels},
        n_positive=n_pos,
        n_negative=len(universe) - n_pos,
    )
