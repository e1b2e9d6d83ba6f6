"""Tail-index fits of standardized market returns.

The return density is a symmetric power-law family with finite variance,

    f(r) = c(alpha, r0) * (1 + r^2 / ((alpha-2) r0^2))^-((alpha+1)/2),

a Student-t with alpha degrees of freedom rescaled so that the second
moment equals r0^2 exactly.  The scale is never fitted: r0^2 is pinned to
the sample second moment, leaving a one-dimensional likelihood in alpha
that is maximized by golden-section search on a log axis.  Errors on alpha
come from the points where the log-likelihood drops by 0.5.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.optimize import brentq
from scipy.special import gammaln

__all__ = [
    "TailFit",
    "pf_density",
    "pf_logpdf",
    "pf_cdf",
    "pf_ppf",
    "pf_sample",
    "fit_alpha",
    "gof_chisq",
    "ALPHA_MIN",
    "ALPHA_MAX",
]

ALPHA_MIN = 2.01
ALPHA_MAX = 50.0


def _check_params(alpha: float, r0: float) -> None:
    if not alpha > 2.0:
        raise ValueError(f"alpha must exceed 2 (finite variance), got {alpha}")
    if not r0 > 0.0:
        raise ValueError(f"r0 must be positive, got {r0}")


def _t_scale(alpha: float, r0: float) -> float:
    # Student-t with df=alpha has variance df/(df-2); shrink the scale so
    # the second moment comes out at r0^2.
    return r0 * np.sqrt((alpha - 2.0) / alpha)


def pf_logpdf(r, alpha: float, r0: float = 1.0):
    """Log density; normalization in closed form via the gamma function."""
    _check_params(alpha, r0)
    r = np.asarray(r, dtype=float)
    c = (
        gammaln((alpha + 1.0) / 2.0)
        - gammaln(alpha / 2.0)
        - 0.5 * np.log(np.pi * (alpha - 2.0))
        - np.log(r0)
    )
    return c - 0.5 * (alpha + 1.0) * np.log1p(r * r / ((alpha - 2.0) * r0 * r0))


def pf_density(r, alpha: float, r0: float = 1.0):
    """Normalized density with tail index alpha and E[r^2] = r0^2."""
    return np.exp(pf_logpdf(r, alpha, r0))


def pf_cdf(r, alpha: float, r0: float = 1.0):
    _check_params(alpha, r0)
    return stats.t.cdf(r, df=alpha, scale=_t_scale(alpha, r0))


def pf_ppf(q, alpha: float, r0: float = 1.0):
    _check_params(alpha, r0)
    return stats.t.ppf(q, df=alpha, scale=_t_scale(alpha, r0))


def pf_sample(alpha: float, r0: float, size: int, rng: np.random.Generator):
    """Draws from the density (rescaled Student-t variates)."""
    _check_params(alpha, r0)
    return stats.t.rvs(df=alpha, scale=_t_scale(alpha, r0), size=size, random_state=rng)


@dataclass
class TailFit:
    """Maximum-likelihood tail index with a fixed-scale constraint.

    ``censored`` is None for an interior maximum, otherwise "upper" or
    "lower" when the likelihood peaks at a search bound (a Gaussian-looking
    sample censors at the upper bound).
    """

    alpha: float
    r0: float
    loglik: float
    ci: tuple[float, float]
    gof_pvalue: float
    n: int
    censored: str | None = None

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "r0": self.r0,
            "loglik": self.loglik,
            "ci": list(self.ci),
            "gof_pvalue": self.gof_pvalue,
            "n": self.n,
            "censored": self.censored,
        }


def _golden_max(f, lo: float, hi: float, tol: float = 1e-9) -> tuple[float, float]:
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def fit_alpha(
    samples,
    alpha_min: float = ALPHA_MIN,
    alpha_max: float = ALPHA_MAX,
    gof_bins: int = 20,
) -> TailFit:
    """Fit the tail index to standardized returns.

    The scale is enforced, not fitted: r0^2 is set to the sample second
    moment (so unit-standardized inputs give r0 = 1).  The likelihood is
    maximized over alpha in (alpha_min, alpha_max] via golden-section on
    log(alpha - 2); the confidence interval collects every alpha whose
    log-likelihood lies within 0.5 of the maximum.  A maximum within
    tolerance of a search bound is reported as a censored fit.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 1:
        raise ValueError("samples must be one-dimensional")
    n = samples.size
    if n < 100:
        raise ValueError(f"need at least 100 samples, got {n}")
    r0 = float(np.sqrt(np.mean(samples * samples)))
    if r0 == 0.0:
        raise ValueError("samples are identically zero")

    def loglik(alpha: float) -> float:
        return float(np.sum(pf_logpdf(samples, alpha, r0)))

    u_lo, u_hi = np.log(alpha_min - 2.0), np.log(alpha_max - 2.0)
    u_hat, l_hat = _golden_max(lambda u: loglik(2.0 + np.exp(u)), u_lo, u_hi)
    alpha_hat = 2.0 + np.exp(u_hat)

    # golden section converges inside the bracket even when the likelihood
    # is monotone; a maximum hugging either end of the u-axis is a censored fit
    censored = None
    span = u_hi - u_lo
    if u_hat >= u_hi - 1e-3 * span and loglik(alpha_max) >= l_hat - 1e-9:
        censored = "upper"
        alpha_hat, l_hat = alpha_max, loglik(alpha_max)
    elif u_hat <= u_lo + 1e-3 * span and loglik(alpha_min) >= l_hat - 1e-9:
        censored = "lower"
        alpha_hat, l_hat = alpha_min, loglik(alpha_min)

    target = l_hat - 0.5

    def drop(alpha: float) -> float:
        return loglik(alpha) - target

    if censored == "lower" or drop(alpha_min) > 0:
        ci_lo = alpha_min
    else:
        ci_lo = brentq(drop, alpha_min, alpha_hat, xtol=1e-10)
    if censored == "upper" or drop(alpha_max) > 0:
        ci_hi = alpha_max
    else:
        ci_hi = brentq(drop, alpha_hat, alpha_max, xtol=1e-10)

    p = gof_chisq(samples, alpha_hat, r0, bins=gof_bins)
    return TailFit(
        alpha=float(alpha_hat),
        r0=r0,
        loglik=float(l_hat),
        ci=(float(ci_lo), float(ci_hi)),
        gof_pvalue=float(p),
        n=n,
        censored=censored,
    )


def gof_chisq(samples, alpha: float, r0: float, bins: int = 20) -> float:
    """Chi-square goodness of fit on equal-probability bins.

    Bin edges are quantiles of the fitted density, so every expected count
    equals n/bins.  If that expected count falls below 5 the bin count is
    reduced (with a warning) to keep the statistic valid; degrees of
    freedom are bins - 2.
    """
    samples = np.asarray(samples, dtype=float)
    _check_params(alpha, r0)
    n = samples.size
    if bins < 3:
        raise ValueError("need at least 3 bins")
    if n / bins < 5:
        new_bins = max(3, n // 5)
        warnings.warn(
            f"expected count {n / bins:.1f} per bin is below 5; reducing bins from {bins} to {new_bins}",
            UserWarning,
            stacklevel=2,
        )
        bins = new_bins
    edges = pf_ppf(np.linspace(0.0, 1.0, bins + 1), alpha, r0)
    edges[0], edges[-1] = -np.inf, np.inf
    observed, _ = np.histogram(samples, bins=edges)
    expected = n / bins
    statistic = float(np.sum((observed - expected) ** 2) / expected)
    dof = bins - 2
    return float(stats.chi2.sf(statistic, dof))
