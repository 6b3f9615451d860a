"""Count distributions used as predictive families.

The central object is the Double Poisson distribution DP(mu, gamma) with
density proportional to

    gamma^(1/2) exp(-gamma*mu) * (exp(-y) y^y / y!) * (e*mu/y)^(gamma*y),

normalized by the series c(mu, gamma). Its first two moments are
approximately mu and mu/gamma, so mu acts as a mean and gamma as an inverse
dispersion: gamma < 1 is over-dispersed, gamma > 1 under-dispersed, and
gamma = 1 recovers the ordinary Poisson exactly.

Poisson, negative binomial and Gaussian families are provided as baselines,
plus a uniform Mixture for ensemble predictions. All probability work on the
Double Poisson happens in log space over a truncated integer support; the
conventions 0^0 = 1 and y*log(y) = 0 at y = 0 apply throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp, ndtr, ndtri, xlogy

from ddpnkit.errors import DomainError, NumericOverflow

DOUBLE_POISSON = "double_poisson"
POISSON = "poisson"
NEG_BINOMIAL = "neg_binomial"
GAUSSIAN = "gaussian"
MIXTURE = "mixture"

_SCALAR_KINDS = frozenset({DOUBLE_POISSON, POISSON, NEG_BINOMIAL, GAUSSIAN})

EFRON_APPROX = "efron_approx"
EXACT_SERIES = "exact_series"


@dataclass(frozen=True)
class SupportTruncation:
    """Truncation policy for infinite-support summations.

    Summation stops once a term past the distribution bulk falls below
    tail_mass_tol times the accumulated sum, or at hard_cap terms.
    """

    tail_mass_tol: float = 1e-10
    hard_cap: int = 10000

    def __post_init__(self):
        if not (0.0 < self.tail_mass_tol < 1.0):
            raise DomainError(f"tail_mass_tol must lie in (0, 1), got {self.tail_mass_tol}")
        if self.hard_cap < 1:
            raise DomainError(f"hard_cap must be positive, got {self.hard_cap}")


DEFAULT_TRUNCATION = SupportTruncation()


@dataclass(frozen=True)
class DoublePoissonParams:
    """Mean parameter mu > 0 and inverse-dispersion gamma > 0."""

    mu: float
    gamma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and self.mu > 0.0):
            raise DomainError(f"mu must be finite and positive, got {self.mu}")
        if not (math.isfinite(self.gamma) and self.gamma > 0.0):
            raise DomainError(f"gamma must be finite and positive, got {self.gamma}")


@dataclass(frozen=True)
class PoissonParams:
    """Rate parameter lam > 0."""

    lam: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam > 0.0):
            raise DomainError(f"lam must be finite and positive, got {self.lam}")


@dataclass(frozen=True)
class NegBinomialParams:
    """Successes r > 0 and success probability p in (0, 1).

    Mean is r*(1-p)/p and variance r*(1-p)/p^2, so the variance always
    exceeds the mean (over-dispersion only).
    """

    r: float
    p: float

    def __post_init__(self):
        if not (math.isfinite(self.r) and self.r > 0.0):
            raise DomainError(f"r must be finite and positive, got {self.r}")
        if not (0.0 < self.p < 1.0):
            raise DomainError(f"p must lie in (0, 1), got {self.p}")


@dataclass(frozen=True)
class GaussianParams:
    """Mean mu and variance sigma2 > 0."""

    mu: float
    sigma2: float

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise DomainError(f"mu must be finite, got {self.mu}")
        if not (math.isfinite(self.sigma2) and self.sigma2 > 0.0):
            raise DomainError(f"sigma2 must be finite and positive, got {self.sigma2}")


@dataclass(frozen=True)
class PredictiveDistribution:
    """Tagged union over the supported families.

    For scalar kinds ``params`` holds the matching parameter record and
    ``components`` is empty. For kind "mixture", ``components`` holds the
    member distributions (uniform weights) and ``params`` is None. Mixture
    members must all share one non-mixture kind.
    """

    kind: str
    params: object = None
    components: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind in _SCALAR_KINDS:
            expected = {
                DOUBLE_POISSON: DoublePoissonParams,
                POISSON: PoissonParams,
                NEG_BINOMIAL: NegBinomialParams,
                GAUSSIAN: GaussianParams,
            }[self.kind]
            if not isinstance(self.params, expected):
                raise DomainError(
                    f"kind {self.kind!r} requires {expected.__name__} params, "
                    f"got {type(self.params).__name__}"
                )
            if self.components:
                raise DomainError("components must be empty for non-mixture kinds")
        elif self.kind == MIXTURE:
            if self.params is not None:
                raise DomainError("mixture takes components, not params")
            if len(self.components) == 0:
                raise DomainError("mixture requires at least one component")
            kinds = {c.kind for c in self.components}
            if len(kinds) != 1 or MIXTURE in kinds:
                raise DomainError(f"mixture members must share one non-mixture kind, got {kinds}")
        else:
            raise DomainError(f"unknown distribution kind {self.kind!r}")

    @property
    def is_discrete(self) -> bool:
        base = self.components[0].kind if self.kind == MIXTURE else self.kind
        return base != GAUSSIAN


def double_poisson(mu: float, gamma: float) -> PredictiveDistribution:
    return PredictiveDistribution(DOUBLE_POISSON, DoublePoissonParams(float(mu), float(gamma)))


def poisson(lam: float) -> PredictiveDistribution:
    return PredictiveDistribution(POISSON, PoissonParams(float(lam)))


def neg_binomial(r: float, p: float) -> PredictiveDistribution:
    return PredictiveDistribution(NEG_BINOMIAL, NegBinomialParams(float(r), float(p)))


def gaussian(mu: float, sigma2: float) -> PredictiveDistribution:
    return PredictiveDistribution(GAUSSIAN, GaussianParams(float(mu), float(sigma2)))


def mixture(components) -> PredictiveDistribution:
    return PredictiveDistribution(MIXTURE, components=tuple(components))


# --- Double Poisson series machinery -----------------------------------------

_log_fact_table = np.zeros(1)


def _log_factorial(n: int) -> np.ndarray:
    """Table of log(y!) for y = 0..n-1, cached across calls."""
    global _log_fact_table
    if n > _log_fact_table.size:
        _log_fact_table = gammaln(np.arange(max(n, 2 * _log_fact_table.size)) + 1.0)
    return _log_fact_table[:n]


def dp_log_h(ys: np.ndarray) -> np.ndarray:
    """log of h(y) = exp(-y) y^y / y!, with h(0) = 1."""
    ys = np.asarray(ys, dtype=float)
    return -ys + xlogy(ys, ys) - gammaln(ys + 1.0)


def dp_log_weight(mu: float, gamma: float, ys: np.ndarray) -> np.ndarray:
    """log of s(mu, gamma, y) = h(y) exp(r(mu, gamma, y)).

    r(mu, gamma, y) = gamma * (y - mu + y*log(mu) - y*log(y)); the
    gamma^(1/2) prefactor of the normalizing series is not included.
    """
    ys = np.asarray(ys, dtype=float)
    r = gamma * (ys - mu + ys * math.log(mu) - xlogy(ys, ys))
    return dp_log_h(ys) + r


def _dp_log_terms(mu: float, gamma: float, trunc: SupportTruncation) -> np.ndarray:
    """Log weights log s(mu, gamma, y) over the truncated support 0..N-1.

    The support is grown until the edge term drops below tail_mass_tol times
    the accumulated sum, subject to hard_cap.
    """
    sd = math.sqrt(mu / gamma + 1.0)
    n = int(min(trunc.hard_cap, max(32, math.ceil(mu + 10.0 * sd + 16.0))))
    log_tol = math.log(trunc.tail_mass_tol)
    while True:
        ys = np.arange(n)
        log_s = dp_log_weight(mu, gamma, ys)
        if n >= trunc.hard_cap or log_s[-1] < log_tol + logsumexp(log_s):
            return log_s
        n = int(min(trunc.hard_cap, 2 * n))


def dp_normalizer(mu: float, gamma: float, trunc: SupportTruncation = DEFAULT_TRUNCATION) -> float:
    """Normalizing constant c(mu, gamma) of the Double Poisson.

    Sum over the truncated support of gamma^(1/2) h(y) exp(r(mu, gamma, y)).
    Equals 1 exactly when gamma = 1 and stays within a few percent of 1 over
    moderate parameter ranges, which is what justifies dropping it from
    training losses.
    """
    DoublePoissonParams(mu, gamma)
    log_c = 0.5 * math.log(gamma) + logsumexp(_dp_log_terms(mu, gamma, trunc))
    c = math.exp(log_c)
    if not math.isfinite(c):
        raise NumericOverflow(f"normalizer overflowed for mu={mu}, gamma={gamma}")
    return c


def dp_series_moments(
    mu: float, gamma: float, trunc: SupportTruncation = DEFAULT_TRUNCATION
) -> tuple[float, float]:
    """Exact mean and variance of DP(mu, gamma) from the normalizing series.

    Evaluates, over the truncated support,

        E[Z]   = mu + sum(s*(y-mu)) / sum(s)
        Var[Z] = mu/gamma + (d*sqrt(gamma)*sum(s) - gamma*sum(s*(y-mu))^2)
                           / (gamma*sum(s)^2)

    with d(mu, gamma) = gamma^(-1/2) * (sum(s*(gamma*(y-mu)^2 - y))
    + sum(s*(y-mu))). These are the correction terms that the Efron moment
    approximations drop.
    """
    log_s = _dp_log_terms(mu, gamma, trunc)
    # ratios of weighted sums are invariant to rescaling s
    w = np.exp(log_s - np.max(log_s))
    ys = np.arange(w.size)
    s0 = float(np.sum(w))
    s1 = float(np.sum(w * (ys - mu)))
    d_scaled = float(np.sum(w * (gamma * (ys - mu) ** 2 - ys))) + s1  # d * sqrt(gamma)
    mean = mu + s1 / s0
    var = mu / gamma + (d_scaled * s0 - gamma * s1 * s1) / (gamma * s0 * s0)
    return mean, var


# --- generic operations -------------------------------------------------------


def pmf_vector(
    dist: PredictiveDistribution, trunc: SupportTruncation = DEFAULT_TRUNCATION
) -> np.ndarray:
    """Normalized PMF over the truncated support 0..N-1 for discrete kinds.

    The vector sums to 1 exactly, so downstream CDF sums terminate cleanly.
    Raises DomainError for Gaussian-based distributions.
    """
    if not dist.is_discrete:
        raise DomainError("pmf_vector requires a discrete distribution")
    if dist.kind == DOUBLE_POISSON:
        log_s = _dp_log_terms(dist.params.mu, dist.params.gamma, trunc)
        p = np.exp(log_s - logsumexp(log_s))
    elif dist.kind in (POISSON, NEG_BINOMIAL):
        frozen = _scipy_discrete(dist)
        n = int(min(trunc.hard_cap, frozen.ppf(1.0 - trunc.tail_mass_tol) + 2))
        p = frozen.pmf(np.arange(n))
        total = p.sum()
        if total <= 0.0 or not np.isfinite(total):
            raise NumericOverflow(f"degenerate PMF for {dist.kind} params {dist.params}")
        p = p / total
    else:  # mixture of a discrete kind
        parts = [pmf_vector(c, trunc) for c in dist.components]
        n = max(part.size for part in parts)
        p = np.zeros(n)
        for part in parts:
            p[: part.size] += part
        p /= len(parts)
    if not np.all(np.isfinite(p)):
        raise NumericOverflow(f"non-finite PMF values for kind {dist.kind}")
    return p


def _scipy_discrete(dist: PredictiveDistribution):
    if dist.kind == POISSON:
        return stats.poisson(dist.params.lam)
    if dist.kind == NEG_BINOMIAL:
        return stats.nbinom(dist.params.r, dist.params.p)
    raise DomainError(f"no scipy counterpart for kind {dist.kind!r}")


def dist_pmf(
    dist: PredictiveDistribution,
    y: int,
    trunc: SupportTruncation = DEFAULT_TRUNCATION,
    normalized: bool = True,
) -> float:
    """PMF at integer y (density for Gaussian).

    For the Double Poisson, normalized=False returns the c = 1 value that the
    training loss implicitly uses; normalized=True divides by dp_normalizer.
    """
    if dist.kind == GAUSSIAN:
        mu, s2 = dist.params.mu, dist.params.sigma2
        return float(math.exp(-0.5 * (y - mu) ** 2 / s2) / math.sqrt(2.0 * math.pi * s2))
    if dist.kind == MIXTURE:
        return float(np.mean([dist_pmf(c, y, trunc, normalized) for c in dist.components]))
    if y < 0 or y != int(y):
        return 0.0
    y = int(y)
    if dist.kind == DOUBLE_POISSON:
        mu, gamma = dist.params.mu, dist.params.gamma
        log_term = 0.5 * math.log(gamma) + float(dp_log_weight(mu, gamma, np.array([y]))[0])
        if normalized:
            log_term -= math.log(dp_normalizer(mu, gamma, trunc))
        val = math.exp(log_term)
        if not math.isfinite(val):
            raise NumericOverflow(f"PMF overflowed at y={y} for mu={mu}, gamma={gamma}")
        return val
    return float(_scipy_discrete(dist).pmf(y))


def dist_cdf(
    dist: PredictiveDistribution, y: float, trunc: SupportTruncation = DEFAULT_TRUNCATION
) -> float:
    """CDF at real y. Nondecreasing, right-continuous, reaches 1 at the cap."""
    if dist.kind == GAUSSIAN:
        mu, s2 = dist.params.mu, dist.params.sigma2
        return float(ndtr((y - mu) / math.sqrt(s2)))
    if dist.kind == MIXTURE:
        return float(np.mean([dist_cdf(c, y, trunc) for c in dist.components]))
    if y < 0:
        return 0.0
    k = int(math.floor(y))
    if dist.kind == DOUBLE_POISSON:
        p = pmf_vector(dist, trunc)
        return float(np.sum(p[: k + 1])) if k < p.size else 1.0
    return float(_scipy_discrete(dist).cdf(k))


def dist_moments(
    dist: PredictiveDistribution,
    mode: str = EFRON_APPROX,
    trunc: SupportTruncation = DEFAULT_TRUNCATION,
) -> tuple[float, float]:
    """Mean and variance.

    mode selects how Double Poisson moments are computed: "efron_approx"
    uses (mu, mu/gamma); "exact_series" evaluates the correction series.
    Other kinds have closed forms and ignore the distinction.
    """
    if mode not in (EFRON_APPROX, EXACT_SERIES):
        raise DomainError(f"unknown moments mode {mode!r}")
    if dist.kind == DOUBLE_POISSON:
        if mode == EXACT_SERIES:
            return dp_series_moments(dist.params.mu, dist.params.gamma, trunc)
        return dist.params.mu, dist.params.mu / dist.params.gamma
    if dist.kind == POISSON:
        return dist.params.lam, dist.params.lam
    if dist.kind == NEG_BINOMIAL:
        r, p = dist.params.r, dist.params.p
        m = r * (1.0 - p) / p
        return m, m / p
    if dist.kind == GAUSSIAN:
        return dist.params.mu, dist.params.sigma2
    member = [dist_moments(c, mode, trunc) for c in dist.components]
    means = np.array([m for m, _ in member])
    variances = np.array([v for _, v in member])
    mean = float(np.mean(means))
    var = float(np.mean(variances + means**2) - mean**2)
    return mean, var


def dist_mode(
    dist: PredictiveDistribution, trunc: SupportTruncation = DEFAULT_TRUNCATION
) -> float:
    """Most probable value; ties break toward the smallest.

    Gaussian mode is the mean, left unrounded even on count labels. A
    mixture of Gaussians also reports its mean as the point prediction.
    """
    if not dist.is_discrete:
        return dist_moments(dist)[0]
    p = pmf_vector(dist, trunc)
    return float(np.argmax(p))


def dist_quantile(
    dist: PredictiveDistribution, q: float, trunc: SupportTruncation = DEFAULT_TRUNCATION
) -> float:
    """Smallest support value z with CDF(z) >= q (equal-tailed interval use)."""
    if not (0.0 < q < 1.0):
        raise DomainError(f"quantile level must lie in (0, 1), got {q}")
    if dist.kind == GAUSSIAN:
        mu, s2 = dist.params.mu, dist.params.sigma2
        return float(mu + math.sqrt(s2) * ndtri(q))
    if dist.is_discrete:
        cdf = np.cumsum(pmf_vector(dist, trunc))
        return float(np.searchsorted(cdf, q - 1e-12))
    # mixture of Gaussians: bisect the averaged CDF
    mus = np.array([c.params.mu for c in dist.components])
    sds = np.array([math.sqrt(c.params.sigma2) for c in dist.components])
    lo = float(np.min(mus - 10.0 * sds))
    hi = float(np.max(mus + 10.0 * sds))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(np.mean(ndtr((mid - mus) / sds))) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dist_sample(
    dist: PredictiveDistribution,
    rng: np.random.Generator,
    n: int,
    trunc: SupportTruncation = DEFAULT_TRUNCATION,
) -> np.ndarray:
    """Draw n samples; deterministic for a given generator state.

    Discrete kinds sample by inverse CDF over the normalized truncated PMF.
    """
    if n < 0:
        raise DomainError(f"sample count must be nonnegative, got {n}")
    if dist.kind == GAUSSIAN:
        mu, s2 = dist.params.mu, dist.params.sigma2
        return mu + math.sqrt(s2) * rng.standard_normal(n)
    if dist.is_discrete:
        cdf = np.cumsum(pmf_vector(dist, trunc))
        cdf[-1] = 1.0
        return np.searchsorted(cdf, rng.random(n), side="left").astype(np.int64)
    # mixture of Gaussians: pick a member, then draw from it
    idx = rng.integers(0, len(dist.components), size=n)
    mus = np.array([c.params.mu for c in dist.components])
    sds = np.array([math.sqrt(c.params.sigma2) for c in dist.components])
    return mus[idx] + sds[idx] * rng.standard_normal(n)
