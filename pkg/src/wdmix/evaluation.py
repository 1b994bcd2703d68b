"""Clustering quality metrics and outlier scoring."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .core import WeightMode, WeightState
from .errors import (
    EmptyCluster,
    LengthMismatch,
    MissingFlags,
    SingleCluster,
    WdmixError,
)


def davies_bouldin(points, labels, centers) -> float:
    """Davies-Bouldin index: mean over clusters of the worst similarity ratio.

    Cluster scatter is the mean (unsquared) Euclidean distance of members to
    the given center; the ratio for a pair is the scatter sum over the
    center distance.  Lower is better.  Duplicate centers give an infinite
    index rather than an error.
    """
    pts = np.asarray(points, dtype=np.float64)
    labs = np.asarray(labels, dtype=np.int64)
    cen = np.asarray(centers, dtype=np.float64)
    if labs.shape[0] != pts.shape[0]:
        raise LengthMismatch("labels and points disagree in length")
    k = cen.shape[0]
    if k < 2:
        raise SingleCluster("Davies-Bouldin needs at least two clusters")
    scatter = np.empty(k)
    for j in range(k):
        members = pts[labs == j]
        if members.shape[0] == 0:
            raise EmptyCluster(f"cluster {j} has no members")
        scatter[j] = float(np.mean(np.linalg.norm(members - cen[j], axis=1)))
    center_dist = np.linalg.norm(cen[:, None, :] - cen[None, :, :], axis=2)
    worst = np.empty(k)
    for j in range(k):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = (scatter[j] + scatter) / center_dist[j]
        ratios[j] = -np.inf
        worst[j] = float(np.max(ratios))
    return float(np.mean(worst))


def micro_f1(predicted, true, matching: str = "optimal") -> float:
    """Micro-averaged F1 after matching clusters to classes one-to-one.

    ``matching='optimal'`` maximises total overlap by rectangular
    assignment; ``'greedy'`` repeatedly takes the largest remaining overlap.
    With single-label data and a full matching this equals plain accuracy.
    """
    pred = np.asarray(predicted).ravel()
    truth = np.asarray(true).ravel()
    if pred.shape[0] != truth.shape[0] or pred.shape[0] == 0:
        raise LengthMismatch("predicted and true labels disagree in length")
    clusters, pred_idx = np.unique(pred, return_inverse=True)
    classes, true_idx = np.unique(truth, return_inverse=True)
    contingency = np.zeros((clusters.size, classes.size), dtype=np.int64)
    np.add.at(contingency, (pred_idx, true_idx), 1)
    if matching == "optimal":
        rows, cols = linear_sum_assignment(contingency, maximize=True)
        pairs = list(zip(rows.tolist(), cols.tolist()))
    elif matching == "greedy":
        pairs = []
        used_rows, used_cols = set(), set()
        order = np.argsort(contingency, axis=None)[::-1]
        for flat in order:
            r, c = divmod(int(flat), contingency.shape[1])
            if r in used_rows or c in used_cols:
                continue
            pairs.append((r, c))
            used_rows.add(r)
            used_cols.add(c)
            if len(pairs) == min(contingency.shape):
                break
    else:
        raise WdmixError(f"unknown matching {matching!r}")
    tp = sum(int(contingency[r, c]) for r, c in pairs)
    # Every point whose true class is not hit counts as one false negative;
    # points in matched clusters that miss additionally count as one false
    # positive, while unmatched clusters predict no class and add none.
    fp = sum(int(contingency[r].sum()) - int(contingency[r, c]) for r, c in pairs)
    fn = int(contingency.sum()) - tp
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


@dataclass(frozen=True)
class OutlierScoreReport:
    """Summary of how well low posterior weight means flag contamination."""

    inlier_mean_weight: float | None
    outlier_mean_weight: float | None
    auc: float | None


def outlier_score_report(weight_state: WeightState, outlier_flag) -> OutlierScoreReport:
    """Score planted outliers by low marginal posterior weight mean.

    The AUC is the rank probability that a random outlier scores higher
    than a random inlier when the score is the negated weight mean (ties
    counted half).  Sides without members leave their fields as None.
    """
    if outlier_flag is None:
        raise MissingFlags("ground-truth outlier flags are required")
    if weight_state.mode != WeightMode.RANDOM or weight_state.marginal_mean is None:
        raise WdmixError("outlier scoring needs marginal posterior weight means")
    flags = np.asarray(outlier_flag, dtype=bool)
    wbar = weight_state.marginal_mean
    if flags.shape != wbar.shape:
        raise LengthMismatch("flags and weight means disagree in length")
    n_out = int(flags.sum())
    n_in = int((~flags).sum())
    inlier_mean = float(wbar[~flags].mean()) if n_in else None
    outlier_mean = float(wbar[flags].mean()) if n_out else None
    auc = None
    if n_in and n_out:
        ranks = rankdata(-wbar)
        auc = float((ranks[flags].sum() - n_out * (n_out + 1) / 2.0) / (n_out * n_in))
    return OutlierScoreReport(inlier_mean, outlier_mean, auc)
