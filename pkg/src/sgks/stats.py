"""Resampling statistics and covariates.

BCa bootstrap confidence intervals, paired sign-flip permutation tests
(exact for small n), Benjamini-Hochberg FDR, tokenizer-fragmentation
covariates, and plain correlations. Everything is deterministic under a
seed: resample index matrices and sign patterns are materialized from a
single generator up front, so chunked and serial evaluation agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import norm, rankdata

from .errors import (
    ConfigurationError,
    DegenerateInputError,
    SizeError,
    ValidationError,
)

_EXACT_PERMUTATION_MAX = 20  # 2^20 sign patterns; exact below, sampled above


@dataclass(frozen=True)
class ConfidenceInterval:
    lo: float
    hi: float
    level: float = 0.95
    method: str = "bca"  # method actually used: "bca" | "percentile"
    n_resamples: int = 2000
    estimate: float = math.nan
    fallback: bool = False  # BCa requested but degraded to percentile

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValidationError(f"interval [{self.lo}, {self.hi}] is inverted")
        if not 0.0 < self.level < 1.0:
            raise ValidationError(f"level must be in (0, 1), got {self.level}")

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    def excludes_zero(self) -> bool:
        return not self.covers(0.0)


def _jackknife_acceleration(samples: np.ndarray, statistic, vectorized: bool) -> float:
    n = samples.shape[0]
    if vectorized and samples.ndim == 1:
        # (n, n-1) leave-one-out index matrix
        base = np.arange(n)
        jk_idx = np.stack([np.delete(base, i) for i in range(n)])
        loo = np.asarray(statistic(samples[jk_idx], axis=1), dtype=np.float64)
    else:
        loo = np.array(
            [float(statistic(np.delete(samples, i, axis=0))) for i in range(n)]
        )
    centered = loo.mean() - loo
    denom = float(np.sum(centered**2)) ** 1.5
    if denom == 0.0:
        return 0.0
    return float(np.sum(centered**3)) / (6.0 * denom)


def bootstrap_ci(
    samples,
    statistic,
    n_resamples: int = 2000,
    level: float = 0.95,
    method: str = "bca",
    *,
    seed: int = 0,
    vectorized: bool = False,
) -> ConfidenceInterval:
    """Bootstrap CI for statistic(samples); BCa by default.

    samples may be 1-D (values) or 2-D (rows are resampled jointly, e.g.
    paired columns for a contrast statistic). BCa uses the standard bias
    correction (fraction of resamples below the point estimate) and
    jackknife acceleration; when every resample lands on one side of the
    estimate the bias term is infinite and the interval falls back to the
    percentile method with ``fallback=True``. With ``vectorized=True`` the
    statistic must accept a 2-D batch plus an ``axis`` keyword (1-D samples
    only) — that path is what makes Monte-Carlo coverage studies cheap.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim not in (1, 2) or samples.shape[0] == 0:
        raise ValidationError("samples must be a non-empty 1-D or 2-D array")
    if method not in ("bca", "percentile"):
        raise ConfigurationError(f"unknown bootstrap method {method!r}")
    if n_resamples < 1:
        raise ConfigurationError(f"n_resamples must be positive, got {n_resamples}")
    if not 0.0 < level < 1.0:
        raise ConfigurationError(f"level must be in (0, 1), got {level}")
    if vectorized and samples.ndim != 1:
        raise ConfigurationError("vectorized statistics take 1-D samples only")
    n = samples.shape[0]
    if method == "bca" and n < 2:
        raise SizeError("BCa needs at least 2 samples for the jackknife")

    theta = float(statistic(samples, axis=0)) if vectorized else float(statistic(samples))
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(n_resamples, n))
    if vectorized:
        boot = np.asarray(statistic(samples[idx], axis=1), dtype=np.float64)
    else:
        boot = np.array([float(statistic(samples[row])) for row in idx])

    alpha = (1.0 - level) / 2.0
    used, fallback = method, False
    if method == "bca":
        frac_below = float(np.mean(boot < theta))
        accel = _jackknife_acceleration(samples, statistic, vectorized)
        z_lo, z_hi = norm.ppf(alpha), norm.ppf(1.0 - alpha)
        if 0.0 < frac_below < 1.0:
            z0 = float(norm.ppf(frac_below))
            denom_lo = 1.0 - accel * (z0 + z_lo)
            denom_hi = 1.0 - accel * (z0 + z_hi)
            if denom_lo > 0.0 and denom_hi > 0.0:
                alpha_lo = float(norm.cdf(z0 + (z0 + z_lo) / denom_lo))
                alpha_hi = float(norm.cdf(z0 + (z0 + z_hi) / denom_hi))
            else:  # acceleration blew past the quantile map; keep it honest
                used, fallback = "percentile", True
        else:
            # z0 infinite: every resample on one side of the estimate
            used, fallback = "percentile", True
    if used == "percentile":
        alpha_lo, alpha_hi = alpha, 1.0 - alpha
    lo = float(np.quantile(boot, alpha_lo))
    hi = float(np.quantile(boot, alpha_hi))
    if lo > hi:
        lo, hi = hi, lo
    return ConfidenceInterval(
        lo=lo,
        hi=hi,
        level=level,
        method=used,
        n_resamples=n_resamples,
        estimate=theta,
        fallback=fallback,
    )


@dataclass(frozen=True)
class PermutationResult:
    observed: float
    p_value: float
    n_shuffles: int
    exact: bool


def paired_permutation(
    a, b, n_shuffles: int = 10_000, *, seed: int = 0
) -> PermutationResult:
    """Two-sided paired sign-flip test on the mean difference.

    The null flips each pair's sign independently. Up to 20 pairs all 2^n
    sign patterns are enumerated and the p-value is the exact tail fraction
    (the identity pattern guarantees p >= 2^-n); above that, n_shuffles
    random patterns with the add-one estimator (1 + hits) / (n_shuffles + 1)
    so p is never zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise SizeError(f"paired samples must match: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise SizeError("need at least one pair")
    if n_shuffles < 1:
        raise ConfigurationError(f"n_shuffles must be positive, got {n_shuffles}")
    diff = a - b
    n = diff.size
    observed = float(np.mean(diff))
    observed_sum = abs(float(np.sum(diff)))
    # enumeration and np.sum round differently; give the comparison slack so
    # the identity pattern always counts itself
    tol = 1e-12 * (1.0 + float(np.sum(np.abs(diff))))

    if n <= _EXACT_PERMUTATION_MAX:
        sums = np.zeros(1)
        for value in diff:
            sums = np.concatenate([sums + value, sums - value])
        hits = int(np.sum(np.abs(sums) >= observed_sum - tol))
        total = sums.size
        return PermutationResult(
            observed=observed, p_value=hits / total, n_shuffles=total, exact=True
        )

    rng = np.random.default_rng(seed)
    hits = 0
    chunk = 2048
    done = 0
    while done < n_shuffles:
        size = min(chunk, n_shuffles - done)
        signs = rng.integers(0, 2, size=(size, n)) * 2 - 1
        sums = np.abs(signs @ diff)
        hits += int(np.sum(sums >= observed_sum - tol))
        done += size
    p = (1 + hits) / (n_shuffles + 1)
    return PermutationResult(
        observed=observed, p_value=p, n_shuffles=n_shuffles, exact=False
    )


def bh_fdr(p_values, q: float = 0.05) -> np.ndarray:
    """Benjamini-Hochberg step-up; returns rejection flags in input order."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.ndim != 1:
        raise ValidationError("p_values must be 1-D")
    if p.size == 0:
        return np.zeros(0, dtype=bool)
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise ValidationError("p-values must lie in [0, 1]")
    if not 0.0 < q < 1.0:
        raise ConfigurationError(f"FDR level must be in (0, 1), got {q}")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order]
    below = np.flatnonzero(ranked <= q * (np.arange(1, m + 1) / m))
    if below.size == 0:
        return np.zeros(m, dtype=bool)
    cutoff = ranked[below[-1]]
    return p <= cutoff


class FragmentationCovariates(NamedTuple):
    pieces_per_char: float
    frag_entropy: float


def fragmentation_covariates(tokenization, text: str) -> FragmentationCovariates:
    """Tokenizer fragmentation covariates for one prompt.

    pieces_per_char is token count over source characters. frag_entropy is
    the Shannon entropy (nats) of the character mass per token-length class:
    a text split into equal-length pieces scores 0 however many pieces there
    are, and mixing lengths raises it. (Entropy over token identities is a
    defensible alternative reading; this one is length-based.)
    """
    tokens = list(tokenization)
    if not tokens:
        raise ValidationError("tokenization is empty")
    if len(text) == 0:
        raise ValidationError("source text is empty")
    lengths = np.array([len(t) for t in tokens], dtype=np.float64)
    total = float(lengths.sum())
    if total == 0.0:
        raise ValidationError("every token is empty")
    pieces_per_char = len(tokens) / len(text)
    masses = []
    for length in np.unique(lengths):
        if length == 0:
            continue  # zero-length tokens carry no character mass
        masses.append(lengths[lengths == length].sum() / total)
    masses = np.asarray(masses)
    entropy = float(-np.sum(masses * np.log(masses)))
    return FragmentationCovariates(pieces_per_char, max(entropy, 0.0))


def correlation(x, y, method: str = "pearson") -> float:
    """Pearson or Spearman (average-rank) correlation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise SizeError(f"correlation inputs must match: {x.shape} vs {y.shape}")
    if x.size < 3:
        raise SizeError(f"need at least 3 points, got {x.size}")
    if method == "spearman":
        x = rankdata(x, method="average")
        y = rankdata(y, method="average")
    elif method != "pearson":
        raise ConfigurationError(f"unknown correlation method {method!r}")
    dx = x - x.mean()
    dy = y - y.mean()
    ssx, ssy = float(dx @ dx), float(dy @ dy)
    if ssx == 0.0 or ssy == 0.0:
        raise DegenerateInputError("correlation is undefined for constant input")
    # one sqrt over the product keeps perfectly correlated input at exactly 1
    r = float(dx @ dy) / math.sqrt(ssx * ssy)
    return min(1.0, max(-1.0, r))
