"""Deep ensembles over count heads and their uncertainty decomposition.

An ensemble is a uniform mixture of M independently trained members. For a
mixture the first two moments follow from the member moments alone:

    mean     = (1/M) * sum(mu_m)
    variance = (1/M) * sum(sigma2_m + mu_m^2) - mean^2

and the variance splits exactly into an aleatoric part, the average member
variance, plus an epistemic part, the spread of member means. Member
variances come from the Efron approximation mu/gamma by default; the exact
series evaluation is available behind a flag.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ddpnkit import distributions as dists
from ddpnkit.errors import DomainError, ShapeError
from ddpnkit.losses import LossSpec
from ddpnkit.network import MLPWeights, forward_batch, load_checkpoint

MANIFEST_HEADER = "ddpnkit-ensemble v1"


@dataclass(frozen=True)
class Ensemble:
    """Members as (weights, loss spec) pairs; all must share one family."""

    members: tuple

    def __post_init__(self):
        if len(self.members) == 0:
            raise DomainError("ensemble requires at least one member")
        families = {spec.family for _, spec in self.members}
        if len(families) != 1:
            raise DomainError(f"ensemble members must share one family, got {families}")
        object.__setattr__(self, "members", tuple(self.members))

    @property
    def family(self) -> str:
        return self.members[0][1].family


@dataclass(frozen=True)
class UncertaintyDecomposition:
    """total = aleatoric + epistemic, all nonnegative."""

    total: object
    aleatoric: object
    epistemic: object


def mixture_moments(means, variances) -> tuple[float, float]:
    """Mean and variance of a uniform mixture with the given member moments."""
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if means.shape != variances.shape or means.shape[0] == 0:
        raise ShapeError("means and variances must be equal-length and nonempty")
    mean = np.mean(means, axis=0)
    var = np.mean(variances + means**2, axis=0) - mean**2
    if means.ndim == 1:
        return float(mean), float(var)
    return mean, var


def decompose_variance(means, variances) -> UncertaintyDecomposition:
    """Split the mixture variance into aleatoric and epistemic parts.

    aleatoric is the average member variance, epistemic the population
    variance of the member means; they sum to the mixture variance.
    """
    means = np.asarray(means, dtype=float)
    variances = np.asarray(variances, dtype=float)
    if means.shape != variances.shape or means.shape[0] == 0:
        raise ShapeError("means and variances must be equal-length and nonempty")
    aleatoric = np.mean(variances, axis=0)
    epistemic = np.mean(means**2, axis=0) - np.mean(means, axis=0) ** 2
    epistemic = np.maximum(epistemic, 0.0)  # guard the tiny negative round-off
    total = aleatoric + epistemic
    if means.ndim == 1:
        return UncertaintyDecomposition(float(total), float(aleatoric), float(epistemic))
    return UncertaintyDecomposition(total, aleatoric, epistemic)


def _member_distribution(spec: LossSpec, heads: np.ndarray) -> dists.PredictiveDistribution:
    log_mu = float(heads[0])
    if spec.family == "poisson":
        return dists.poisson(np.exp(log_mu))
    second = float(heads[1])
    if spec.family == "double_poisson":
        return dists.double_poisson(np.exp(log_mu), np.exp(second))
    if spec.family == "neg_binomial":
        m = np.exp(log_mu)
        alpha = np.exp(second)
        return dists.neg_binomial(1.0 / alpha, 1.0 / (1.0 + alpha * m))
    return dists.gaussian(np.exp(log_mu), np.exp(second))


def member_distributions(
    weights: MLPWeights, spec: LossSpec, X: np.ndarray
) -> list:
    """Per-row predictive distributions of a single model."""
    heads = forward_batch(weights, X)
    return [_member_distribution(spec, row) for row in heads]


def mixture_predict(ens: Ensemble, x: np.ndarray) -> dists.PredictiveDistribution:
    """Uniform mixture of the member predictive distributions at input x."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != 1:
        raise ShapeError("mixture_predict takes a single input row")
    components = [
        _member_distribution(spec, forward_batch(w, x)[0]) for w, spec in ens.members
    ]
    return dists.mixture(components)


def member_moments(
    ens: Ensemble, X: np.ndarray, mode: str = dists.EFRON_APPROX
) -> tuple[np.ndarray, np.ndarray]:
    """Member means and variances, both shaped (M, n).

    mode "efron_approx" reads moments straight off the head outputs and
    tolerates extreme values (variances may overflow to inf far from the
    training data); "exact_series" evaluates the Double Poisson series.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    means, variances = [], []
    for w, spec in ens.members:
        with np.errstate(over="ignore"):
            heads = forward_batch(w, X)
            if spec.family == "double_poisson" and mode == dists.EXACT_SERIES:
                pairs = [
                    dists.dp_series_moments(float(np.exp(h[0])), float(np.exp(h[1])))
                    for h in heads
                ]
                m = np.array([p[0] for p in pairs])
                v = np.array([p[1] for p in pairs])
            elif spec.family == "double_poisson":
                m = np.exp(heads[:, 0])
                v = m / np.exp(heads[:, 1])
            elif spec.family == "poisson":
                m = np.exp(heads[:, 0])
                v = m.copy()
            elif spec.family == "neg_binomial":
                m = np.exp(heads[:, 0])
                v = m * (1.0 + np.exp(heads[:, 1]) * m)
            else:
                m = np.exp(heads[:, 0])
                v = np.exp(heads[:, 1])
        means.append(m)
        variances.append(v)
    return np.stack(means), np.stack(variances)


def variance_scores(ens: Ensemble, X: np.ndarray, mode: str = dists.EFRON_APPROX) -> np.ndarray:
    """Total mixture variance per input row, the OOD detection score."""
    means, variances = member_moments(ens, X, mode)
    return np.asarray(decompose_variance(means, variances).total)


def predict_table(
    ens: Ensemble,
    X: np.ndarray,
    mode: str = dists.EFRON_APPROX,
    trunc: dists.SupportTruncation = dists.DEFAULT_TRUNCATION,
):
    """Per-row decomposition and equal-tailed 95 percent mixture interval.

    Returns a dict of arrays: mean, aleatoric, epistemic, q025, q975.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    means, variances = member_moments(ens, X, mode)
    dec = decompose_variance(means, variances)
    q025 = np.zeros(X.shape[0])
    q975 = np.zeros(X.shape[0])
    for i in range(X.shape[0]):
        mix = mixture_predict(ens, X[i])
        q025[i] = dists.dist_quantile(mix, 0.025, trunc)
        q975[i] = dists.dist_quantile(mix, 0.975, trunc)
    return {
        "mean": np.mean(means, axis=0),
        "aleatoric": np.asarray(dec.aleatoric),
        "epistemic": np.asarray(dec.epistemic),
        "q025": q025,
        "q975": q975,
    }


# --- manifest I/O -------------------------------------------------------------


class ManifestFormatError(DomainError):
    """The ensemble manifest does not follow the expected layout."""


def save_manifest(paths, spec: LossSpec, path) -> None:
    """Write the member checkpoint list with its family tag."""
    lines = [MANIFEST_HEADER, f"family={spec.family}", f"beta={spec.beta!r}"]
    lines.extend(str(p) for p in paths)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_manifest(path) -> tuple[list, LossSpec]:
    """Read a manifest; returns (checkpoint paths, loss spec)."""
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh]
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ManifestFormatError(f"{path}: missing header {MANIFEST_HEADER!r}")
    meta = {}
    i = 1
    while i < len(lines) and "=" in lines[i]:
        key, _, value = lines[i].partition("=")
        meta[key] = value
        i += 1
    if "family" not in meta:
        raise ManifestFormatError(f"{path}: missing family tag")
    spec = LossSpec(meta["family"], float(meta.get("beta", 0.0)))
    paths = [line for line in lines[i:] if line.strip()]
    if not paths:
        raise ManifestFormatError(f"{path}: no member checkpoints listed")
    return paths, spec


def load_ensemble(manifest_path) -> Ensemble:
    """Load all member checkpoints; relative paths resolve against the manifest."""
    paths, spec = load_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    members = []
    for p in paths:
        full = p if os.path.isabs(p) else os.path.join(base, p)
        weights, meta = load_checkpoint(full)
        member_spec = LossSpec(meta.get("family", spec.family),
                               float(meta.get("beta", spec.beta)))
        if member_spec.family != spec.family:
            raise ManifestFormatError(
                f"{full}: family {member_spec.family} does not match manifest {spec.family}"
            )
        members.append((weights, member_spec))
    return Ensemble(tuple(members))
