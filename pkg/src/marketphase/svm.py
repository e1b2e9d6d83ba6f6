"""Stochastic volatility model: simulation, spectrum calibration, beta errors.

Returns in a single window follow

    r_i(t) = sqrt(theta) gamma0_i eta_t + sqrt(1-theta) gamma1_i eta_it

with i.i.d. unit-variance noise, so the population covariance is
theta gamma0_i gamma0_j + (1-theta) gamma1_i^2 delta_ij and the leading
eigenvalue approaches theta (N-1) + 1 with eigenvector gamma0.  Both
parameter vectors are normalized to sum of squares N, leaving the location
of the gamma1 distribution as the single free shape parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .rng import generator
from .spectral import ConvergenceError, leading_eigenpair

__all__ = [
    "GammaSpec",
    "SvmConfig",
    "BetaErrorReport",
    "draw_gamma",
    "simulate_svm",
    "beta_error_bands",
    "calibrate_gamma0",
]

GAMMA_FAMILIES = ("lognormal", "normal", "laplace", "constant")


@dataclass(frozen=True)
class GammaSpec:
    """One-parameter volatility-loading family.

    ``mean`` is the location parameter before the sum-of-squares
    normalization; the second parameter of each two-parameter family is
    eliminated by the unit mean-square constraint E[g^2] = 1.
    """

    family: str
    mean: float = 1.0

    def __post_init__(self):
        if self.family not in GAMMA_FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {GAMMA_FAMILIES}")
        if self.family == "constant":
            if self.mean != 1.0:
                raise ValueError("constant family fixes the mean at 1")
        elif not 0 < self.mean < 1:
            # mean 1 with unit mean square forces a point mass; use 'constant'
            raise ValueError(f"{self.family} family needs 0 < mean < 1, got {self.mean}")


def draw_gamma(spec: GammaSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n loadings from the family and normalize to sum(g^2) = n."""
    if spec.family == "constant":
        g = np.ones(n)
    elif spec.family == "lognormal":
        # E[X] = mean and E[X^2] = 1  =>  sigma^2 = -2 ln(mean), mu = -sigma^2
        s2 = -2.0 * np.log(spec.mean)
        g = rng.lognormal(mean=-s2, sigma=np.sqrt(s2), size=n)
    elif spec.family == "normal":
        g = rng.normal(spec.mean, np.sqrt(1.0 - spec.mean**2), size=n)
    else:  # laplace
        g = rng.laplace(spec.mean, np.sqrt((1.0 - spec.mean**2) / 2.0), size=n)
    ss = float(np.sum(g * g))
    if ss == 0.0:
        raise ValueError("degenerate zero draw for gamma loadings")
    return g * np.sqrt(n / ss)


@dataclass
class SvmConfig:
    """Realized model instance: parameter vectors plus noise choices."""

    n: int
    theta: float
    gamma0: np.ndarray
    gamma1: np.ndarray
    beta_spec: GammaSpec | None = None
    gamma1_spec: GammaSpec | None = None
    idio_noise: str = "normal"      # or "laplace"

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")
        if self.idio_noise not in ("normal", "laplace"):
            raise ValueError(f"idio_noise must be 'normal' or 'laplace', got {self.idio_noise!r}")
        self.gamma0 = np.asarray(self.gamma0, dtype=float)
        self.gamma1 = np.asarray(self.gamma1, dtype=float)
        for name, g in (("gamma0", self.gamma0), ("gamma1", self.gamma1)):
            if g.shape != (self.n,):
                raise ValueError(f"{name} must have shape ({self.n},)")
            if abs(np.sum(g * g) - self.n) > 1e-9 * self.n:
                raise ValueError(f"{name} must satisfy sum(g^2) = N")

    @classmethod
    def from_spec(
        cls,
        n: int,
        theta: float,
        gamma1_spec: GammaSpec,
        beta_spec: GammaSpec | None = None,
        idio_noise: str = "normal",
        seed: int = 0,
    ) -> "SvmConfig":
        """Draw the parameter vectors deterministically from the seed."""
        beta_spec = beta_spec or GammaSpec("lognormal", 0.93)
        rng = generator(seed, 11)
        gamma0 = draw_gamma(beta_spec, n, rng)
        gamma1 = draw_gamma(gamma1_spec, n, rng)
        return cls(
            n=n, theta=theta, gamma0=gamma0, gamma1=gamma1,
            beta_spec=beta_spec, gamma1_spec=gamma1_spec, idio_noise=idio_noise,
        )


def simulate_svm(cfg: SvmConfig, t: int, seed) -> np.ndarray:
    """One window of model returns, shape (N, T).  Reproducible from seed."""
    if t < 1:
        raise ValueError("window length must be positive")
    rng = generator(seed, 23)
    market = rng.standard_normal(t)
    if cfg.idio_noise == "normal":
        idio = rng.standard_normal((cfg.n, t))
    else:
        idio = rng.laplace(0.0, 1.0 / np.sqrt(2.0), size=(cfg.n, t))
    return (
        np.sqrt(cfg.theta) * np.outer(cfg.gamma0, market)
        + np.sqrt(1.0 - cfg.theta) * cfg.gamma1[:, None] * idio
    )


@dataclass
class BetaErrorReport:
    """Monte Carlo spread of estimated betas around the input vector.

    ``band_lo``/``band_hi`` hold the (2.5%, 97.5%) quantiles of the
    estimated beta for each stock, listed in ascending order of the input
    beta (the plotting rank).  ``avg_error`` is the mean half-width of the
    95% band across stocks.
    """

    t: int
    replicas: int
    effective_replicas: int
    avg_error: float
    input_beta: np.ndarray           # ascending
    band_lo: np.ndarray
    band_hi: np.ndarray
    lambda0: np.ndarray              # per replica
    match_by: str = "index"
    skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "replicas": self.replicas,
            "effective_replicas": self.effective_replicas,
            "avg_error": self.avg_error,
            "match_by": self.match_by,
            "skipped": self.skipped,
            "lambda0_mean": float(np.mean(self.lambda0)),
            "lambda0_rel_sd": float(np.std(self.lambda0, ddof=1) / np.mean(self.lambda0)),
            "input_beta": self.input_beta.tolist(),
            "band_lo": self.band_lo.tolist(),
            "band_hi": self.band_hi.tolist(),
        }


def beta_error_bands(
    cfg: SvmConfig,
    t: int,
    replicas: int = 200,
    seed: int = 0,
    match_by: str = "index",
) -> BetaErrorReport:
    """Repeat the window simulation and band the estimated betas.

    Each replica re-draws only the noise; the parameter vectors stay fixed.
    Betas are estimated from the leading eigenpair of the sample covariance,
    sign-fixed, and compared to the input either by stock index (default)
    or by rank within each replica.  Replica seeds derive deterministically
    from the master seed, so parallel evaluation cannot change the result.
    """
    if replicas < 2:
        raise ValueError("need at least 2 replicas")
    if match_by not in ("index", "rank"):
        raise ValueError("match_by must be 'index' or 'rank'")

    betas = np.empty((replicas, cfg.n))
    lams = np.empty(replicas)
    ok = np.zeros(replicas, dtype=bool)
    for k in range(replicas):
        r = simulate_svm(cfg, t, seed=(int(seed), 31, k))
        c = (r @ r.T) / t
        try:
            lam, beta = leading_eigenpair(c, check_gap=False)
        except ConvergenceError:
            continue
        betas[k] = beta
        lams[k] = lam
        ok[k] = True

    eff = int(ok.sum())
    if eff < 2:
        raise ConvergenceError("fewer than 2 replicas produced a leading eigenpair")
    betas = betas[ok]
    lams = lams[ok]

    order = np.argsort(cfg.gamma0)
    if match_by == "rank":
        sample = np.sort(betas, axis=1)
        input_beta = np.sort(cfg.gamma0)
    else:
        sample = betas[:, order]
        input_beta = cfg.gamma0[order]

    lo = np.quantile(sample, 0.025, axis=0)
    hi = np.quantile(sample, 0.975, axis=0)
    return BetaErrorReport(
        t=t,
        replicas=replicas,
        effective_replicas=eff,
        avg_error=float(np.mean((hi - lo) / 2.0)),
        input_beta=input_beta,
        band_lo=lo,
        band_hi=hi,
        lambda0=lams,
        match_by=match_by,
        skipped=replicas - eff,
    )


def _bulk_eigenvalues(r: np.ndarray, t: int) -> np.ndarray:
    vals = np.linalg.eigvalsh((r @ r.T) / t)
    return vals[:-1]


def simulated_bulk(
    cfg: SvmConfig,
    t: int,
    seed: int,
    replicas: int = 8,
    redraw_loadings: bool = True,
) -> np.ndarray:
    """Bulk eigenvalues pooled over replicas (leading eigenvalue dropped)."""
    out = []
    for k in range(replicas):
        rng = generator(seed, 41, k)
        c = cfg
        if redraw_loadings:
            beta_spec = cfg.beta_spec or GammaSpec("lognormal", 0.93)
            g0 = draw_gamma(beta_spec, cfg.n, rng)
            g1 = draw_gamma(cfg.gamma1_spec, cfg.n, rng) if cfg.gamma1_spec else cfg.gamma1
            c = replace(cfg, gamma0=g0, gamma1=g1)
        market = rng.standard_normal(t)
        idio = rng.standard_normal((c.n, t))
        r = (np.sqrt(c.theta) * np.outer(c.gamma0, market)
             + np.sqrt(1.0 - c.theta) * c.gamma1[:, None] * idio)
        out.append(_bulk_eigenvalues(r, t))
    return np.concatenate(out)


def calibrate_gamma0(
    empirical_bulk: np.ndarray,
    cfg_template: SvmConfig,
    t: int,
    seed: int = 0,
    replicas: int = 8,
    bounds: tuple[float, float] = (0.40, 0.98),
    coarse: int = 13,
    refine: int = 7,
    exclude_second: bool = False,
) -> tuple[float, float]:
    """Fit the gamma1 location by matching the bulk eigenvalue spectrum.

    Grid search (coarse then refined around the best point) over the family
    location, maximizing the two-sample Kolmogorov-Smirnov p-value between
    the empirical bulk and the simulated bulk pooled over replicas.  The
    same replica seeds are reused for every candidate so the p-value surface
    is smooth in the candidate parameter.  Returns (best location, p-value).

    ``exclude_second`` drops the largest remaining empirical eigenvalue,
    for markets where it reflects structure rather than noise.
    """
    emp = np.sort(np.asarray(empirical_bulk, dtype=float))
    if emp.size == 0:
        raise ValueError("empirical bulk is empty")
    if exclude_second:
        emp = emp[:-1]
        if emp.size == 0:
            raise ValueError("empirical bulk is empty after dropping its largest value")
    if cfg_template.gamma1_spec is None:
        raise ValueError("cfg_template must carry a gamma1_spec naming the family")
    family = cfg_template.gamma1_spec.family

    if family == "constant":
        candidates = [1.0]
    else:
        candidates = list(np.linspace(bounds[0], bounds[1], coarse))

    def pvalue(mean: float) -> float:
        spec = GammaSpec(family, mean) if family != "constant" else GammaSpec("constant")
        cfg = replace(cfg_template, gamma1_spec=spec)
        ref = simulated_bulk(cfg, t, seed=seed, replicas=replicas)
        return float(stats.ks_2samp(emp, ref).pvalue)

    ps = [pvalue(m) for m in candidates]
    best = int(np.argmax(ps))
    if family == "constant" or len(candidates) == 1:
        return candidates[best], ps[best]

    lo = candidates[max(0, best - 1)]
    hi = candidates[min(len(candidates) - 1, best + 1)]
    fine = list(np.linspace(lo, hi, refine))
    fps = [pvalue(m) for m in fine]
    j = int(np.argmax(fps))
    if fps[j] >= ps[best]:
        return fine[j], fps[j]
    return candidates[best], ps[best]
