"""Small statistics helpers shared by the validation layers.

Thin wrappers around scipy.stats plus the few bits it does not package
directly: Wilson intervals, a two-sample KS critical value, chi-square
goodness of fit with small-expected-count bin merging, and a log-linear
survival-tail fit.
"""

import numpy as np
from scipy import stats

from .errors import DomainError


def wilson_interval(successes, n, z=1.959963984540054):
    """Wilson 95% (by default) score interval for a binomial proportion."""
    if n <= 0:
        raise DomainError("need a positive sample size")
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, center - half), min(1.0, center + half)


def ks_critical_value(n, m, level=0.01):
    """Large-sample two-sample KS rejection threshold at the given level."""
    if not 0 < level < 1:
        raise DomainError("level must be in (0, 1)")
    c = np.sqrt(-0.5 * np.log(level / 2.0))
    return float(c * np.sqrt((n + m) / (n * m)))


def ks_two_sample(a, b):
    """Two-sample KS statistic and p-value."""
    res = stats.ks_2samp(np.asarray(a, float), np.asarray(b, float))
    return float(res.statistic), float(res.pvalue)


def chi_square_gof(observed, expected, min_expected=5.0):
    """Chi-square GOF after merging trailing bins with small expectations.

    observed: integer counts per bin; expected: matching expected counts
    (same total).  Bins are merged from the right until every expected
    count reaches min_expected.  Returns (statistic, pvalue, dof).
    """
    obs = np.asarray(observed, dtype=float)
    exp = np.asarray(expected, dtype=float)
    if obs.shape != exp.shape:
        raise DomainError("observed and expected must align")
    while len(exp) > 1 and exp[-1] < min_expected:
        exp[-2] += exp[-1]
        obs[-2] += obs[-1]
        obs, exp = obs[:-1], exp[:-1]
    keep = exp >= min_expected
    if not np.all(keep):
        obs = np.concatenate([obs[keep], [obs[~keep].sum()]])
        exp = np.concatenate([exp[keep], [exp[~keep].sum()]])
    if len(obs) < 2:
        raise DomainError("too few bins with adequate expected counts")
    statistic = float(np.sum((obs - exp) ** 2 / exp))
    dof = len(obs) - 1
    return statistic, float(stats.chi2.sf(statistic, dof)), dof


def empirical_survival(samples, thresholds):
    """P(sample >= threshold) for each threshold."""
    x = np.sort(np.asarray(samples, dtype=float))
    t = np.asarray(thresholds, dtype=float)
    return 1.0 - np.searchsorted(x, t, side="left") / len(x)


def fit_exponential_tail(thresholds, survival):
    """Least-squares fit of log survival = log_c - lam * t.

    Uses only the strictly interior estimates (0 < s < 1); needs at least
    three of them.  Returns (lam, log_c).
    """
    t = np.asarray(thresholds, dtype=float)
    s = np.asarray(survival, dtype=float)
    mask = (s > 0.0) & (s < 1.0)
    if mask.sum() < 3:
        raise DomainError("need at least 3 interior survival points to fit a tail")
    slope, intercept = np.polyfit(t[mask], np.log(s[mask]), 1)
    return float(-slope), float(intercept)
