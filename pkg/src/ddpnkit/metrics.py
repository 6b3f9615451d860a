"""Calibration and detection metrics for count predictions.

Point accuracy is mean absolute error against the distribution mode (ties
break toward the smallest value; Gaussian predictions use their mean,
unrounded). Sharpness-aware accuracy is the continuous ranked probability
score; for a discrete predictive CDF F and a count label y

    CRPS(F, y) = sum_{z<y} F(z)^2 + sum_{z>=y} (F(z) - 1)^2,

with the upper sum truncated once its terms fall below 1e-12. Gaussian
families use the closed form, and Gaussian mixtures the kernel identity
CRPS = E|X - y| - E|X - X'|/2. Median precision summarizes how tightly a
model concentrates, the median of 1/variance over the evaluation set.

OOD detection quality is scored on AUROC (rank statistic with tie
correction), AUPR with the OOD points as positives, and FPR80, the false
positive rate where the true positive rate first reaches 0.80.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from ddpnkit import distributions as dists
from ddpnkit.errors import DomainError, ShapeError

_CRPS_TAIL_TOL = 1e-12


def mae(predictions, ys) -> float:
    """Mean absolute error between labels and distribution modes."""
    if len(predictions) != len(ys):
        raise ShapeError(f"{len(predictions)} predictions for {len(ys)} labels")
    if len(ys) == 0:
        raise ShapeError("mae needs at least one example")
    modes = np.array([dists.dist_mode(d) for d in predictions])
    return float(np.mean(np.abs(np.asarray(ys, dtype=float) - modes)))


def crps_from_pmf(pmf: np.ndarray, y: int) -> float:
    """CRPS of a normalized PMF vector against an integer label."""
    y = int(y)
    if y < 0:
        raise DomainError(f"count label must be nonnegative, got {y}")
    cdf = np.cumsum(np.asarray(pmf, dtype=float))
    n = cdf.size
    low = min(y, n)
    total = float(np.sum(cdf[:low] ** 2)) + max(0, y - n)  # CDF is 1 past the support
    tail = (cdf[low:] - 1.0) ** 2
    small = np.nonzero(tail < _CRPS_TAIL_TOL)[0]
    stop = int(small[0]) if small.size else tail.size
    return total + float(np.sum(tail[:stop]))


def _gauss_abs_moment(delta: float, var: float) -> float:
    # E|N(delta, var)|
    s = math.sqrt(var)
    u = delta / s
    return s * (u * (2.0 * float(ndtr(u)) - 1.0)
                + 2.0 * math.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi))


def crps_gaussian(mu: float, sigma2: float, y: float) -> float:
    """Closed-form CRPS of a single Gaussian."""
    s = math.sqrt(sigma2)
    u = (y - mu) / s
    phi = math.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
    return s * (u * (2.0 * float(ndtr(u)) - 1.0) + 2.0 * phi - 1.0 / math.sqrt(math.pi))


def crps(
    dist: dists.PredictiveDistribution,
    y,
    trunc: dists.SupportTruncation = dists.DEFAULT_TRUNCATION,
) -> float:
    """CRPS of one predictive distribution against one label."""
    if dist.kind == dists.GAUSSIAN:
        return crps_gaussian(dist.params.mu, dist.params.sigma2, float(y))
    if dist.is_discrete:
        yi = int(round(float(y)))
        if abs(float(y) - yi) > 1e-9:
            raise DomainError(f"discrete CRPS needs an integer label, got {y}")
        return crps_from_pmf(dists.pmf_vector(dist, trunc), yi)
    # mixture of Gaussians through the kernel identity
    mus = np.array([c.params.mu for c in dist.components])
    vars_ = np.array([c.params.sigma2 for c in dist.components])
    m = mus.size
    to_label = np.mean([_gauss_abs_moment(float(y) - mus[i], vars_[i]) for i in range(m)])
    cross = np.mean([
        _gauss_abs_moment(mus[i] - mus[j], vars_[i] + vars_[j])
        for i in range(m) for j in range(m)
    ])
    return float(to_label - 0.5 * cross)


def median_precision(variances) -> float:
    """Median of the reciprocal predictive variances."""
    variances = np.asarray(variances, dtype=float)
    if variances.size == 0:
        raise ShapeError("median_precision needs at least one variance")
    if np.any(np.isnan(variances)) or np.any(variances <= 0.0):
        raise DomainError("variances must be positive")
    return float(np.median(1.0 / variances))


@dataclass(frozen=True)
class OODScores:
    """Uncertainty scores of in-distribution and OOD inputs."""

    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "id_scores", np.asarray(self.id_scores, dtype=float))
        object.__setattr__(self, "ood_scores", np.asarray(self.ood_scores, dtype=float))
        if self.id_scores.size == 0 or self.ood_scores.size == 0:
            raise ShapeError("both score sets must be nonempty")
        if np.any(np.isnan(self.id_scores)) or np.any(np.isnan(self.ood_scores)):
            raise DomainError("scores must not contain NaN")


def _detection_counts(scores: OODScores):
    """Cumulative TP and FP per distinct threshold, thresholds descending."""
    all_scores = np.concatenate([scores.ood_scores, scores.id_scores])
    labels = np.concatenate([
        np.ones(scores.ood_scores.size), np.zeros(scores.id_scores.size)
    ])
    order = np.argsort(-all_scores, kind="stable")
    sorted_scores = all_scores[order]
    sorted_labels = labels[order]
    # group tied scores so each distinct threshold appears once
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.append(boundary, sorted_scores.size - 1)
    tp = np.cumsum(sorted_labels)[ends]
    fp = np.cumsum(1.0 - sorted_labels)[ends]
    return tp, fp


def ood_curve_metrics(scores: OODScores) -> tuple[float, float, float]:
    """(AUROC, AUPR, FPR80) of ranking by raw score, higher means more OOD."""
    n_ood = scores.ood_scores.size
    n_id = scores.id_scores.size
    ranks = rankdata(np.concatenate([scores.ood_scores, scores.id_scores]))
    auroc = (float(np.sum(ranks[:n_ood])) - n_ood * (n_ood + 1) / 2.0) / (n_ood * n_id)

    tp, fp = _detection_counts(scores)
    recall = tp / n_ood
    precision = tp / np.maximum(tp + fp, 1.0)
    aupr = float(np.sum(np.diff(np.concatenate([[0.0], recall])) * precision))

    reach = np.nonzero(recall >= 0.80)[0]
    fpr80 = float(fp[reach[0]] / n_id) if reach.size else 1.0
    return auroc, aupr, fpr80


@dataclass(frozen=True)
class EvalRecord:
    """Per-example metric pieces plus their aggregates."""

    modes: np.ndarray
    crps_values: np.ndarray
    variances: np.ndarray
    mae: float
    crps_mean: float
    median_precision: float

    def summary(self) -> dict:
        return {
            "mae": self.mae,
            "crps_mean": self.crps_mean,
            "median_precision": self.median_precision,
        }


def evaluate(
    predictions,
    ys,
    variances=None,
    trunc: dists.SupportTruncation = dists.DEFAULT_TRUNCATION,
) -> EvalRecord:
    """Score a list of predictive distributions against labels.

    variances defaults to each distribution's own (Efron approximate)
    variance; ensembles pass their mixture variance explicitly.
    """
    ys = np.asarray(ys, dtype=float)
    if len(predictions) != ys.size:
        raise ShapeError(f"{len(predictions)} predictions for {ys.size} labels")
    if ys.size == 0:
        raise ShapeError("evaluate needs at least one example")
    modes = np.array([dists.dist_mode(d, trunc) for d in predictions])
    crps_values = np.array([crps(d, y, trunc) for d, y in zip(predictions, ys)])
    if variances is None:
        variances = np.array([dists.dist_moments(d)[1] for d in predictions])
    else:
        variances = np.asarray(variances, dtype=float)
        if variances.size != ys.size:
            raise ShapeError("variances must match the number of examples")
    return EvalRecord(
        modes=modes,
        crps_values=crps_values,
        variances=variances,
        mae=float(np.mean(np.abs(ys - modes))),
        crps_mean=float(np.mean(crps_values)),
        median_precision=median_precision(variances),
    )
