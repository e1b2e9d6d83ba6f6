"""Covariance spectra, market betas, and rank-one perturbation formulas.

The covariance of a wide return panel is dominated by one eigenvalue of
order N.  Its eigenvector, scaled to sum(beta^2) = N and sign-fixed to a
positive mean, gives the per-stock market betas; the projection of the
returns on beta is the market return.  The perturbation operations treat
C = gamma gamma' + C1 and expand the eigensystem in powers of C1/gamma^2,
which is accurate up to O(1/N) under market dominance (gamma^2 of order N,
overlaps of order 1).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

from .panels import ReturnPanel, WindowSpec, slice_window

__all__ = [
    "CovarianceMatrix",
    "WindowSpectrum",
    "RankOneDecomposition",
    "DegenerateWindowError",
    "ConvergenceError",
    "NoPositiveWindowError",
    "DegenerateSpectrumWarning",
    "covariance",
    "leading_eigenpair",
    "full_spectrum",
    "minimal_positive_window",
    "perturb_eigenpair",
    "perturb_bulk",
]


class DegenerateWindowError(ValueError):
    """Window with all-zero returns; no covariance defined."""


class ConvergenceError(RuntimeError):
    """Eigen-iteration failed to reach the residual tolerance."""


class NoPositiveWindowError(ValueError):
    """No candidate window length gives all-positive betas.

    Carries ``violations``: per-length count of windows with a
    non-positive beta component.
    """

    def __init__(self, violations: dict[int, int]):
        self.violations = violations
        super().__init__(f"no candidate window length passes the positivity criterion: {violations}")


class DegenerateSpectrumWarning(UserWarning):
    """Leading eigenvalue tied with the next one within tolerance."""


@dataclass
class CovarianceMatrix:
    """Window covariance C_ij = (1/T) sum_tau r_i r_j (means neglected)."""

    c: np.ndarray                # N x N symmetric
    window: WindowSpec
    returns: np.ndarray          # N x T window slice used to build C
    center_date: str | None = None

    @property
    def n(self) -> int:
        return self.c.shape[0]


@dataclass
class WindowSpectrum:
    """Eigen-summary of one window.

    lambda0 is the leading eigenvalue, beta the leading eigenvector scaled
    to sum(beta^2) = N with positive mean, bulk the remaining eigenvalues
    sorted descending.  market_var stores lambda0/N, which equals the
    second moment of the market return exactly.  v2 is the mean per-stock
    within-window variance (window means subtracted here only).
    """

    center: int
    t: int
    lambda0: float
    beta: np.ndarray
    bulk: np.ndarray
    v2: float
    market_var: float
    market_return: np.ndarray
    center_date: str | None = None
    degenerate: bool = False
    mixed_sign: bool = False

    @property
    def n(self) -> int:
        return len(self.beta)


# relative gap below which the top of the spectrum counts as tied
_TIE_RTOL = 1e-8


def covariance(rp: ReturnPanel, w: WindowSpec) -> CovarianceMatrix:
    """Covariance matrix over one window, without mean subtraction."""
    if w.length < 2:
        raise ValueError("window length must be at least 2")
    sub = slice_window(rp, w)
    r = sub.returns
    if not np.any(r):
        raise DegenerateWindowError(f"window centered at {w.center} has all-zero returns")
    c = (r @ r.T) / w.length
    c = 0.5 * (c + c.T)     # clean rounding asymmetry
    center_date = sub.dates[len(sub.dates) // 2] if sub.dates else None
    return CovarianceMatrix(c=c, window=w, returns=r, center_date=center_date)


def _fix_sign(beta: np.ndarray) -> np.ndarray:
    return -beta if beta.mean() < 0 else beta


def leading_eigenpair(
    c: CovarianceMatrix | np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    check_gap: bool = True,
) -> tuple[float, np.ndarray]:
    """Dominant eigenpair via power iteration with a Rayleigh-quotient test.

    Converges when ||C b - lambda b|| / ||lambda b|| <= tol.  The eigenvector
    is scaled to sum(beta^2) = N and sign-fixed to positive mean.  A tie of
    the two leading eigenvalues within relative 1e-8 raises
    DegenerateSpectrumWarning (the returned vector is then arbitrary within
    the leading eigenspace).
    """
    a = c.c if isinstance(c, CovarianceMatrix) else np.asarray(c, dtype=float)
    n = a.shape[0]
    x = np.ones(n) / np.sqrt(n)
    lam = 0.0
    residual = np.inf
    for _ in range(max_iter):
        y = a @ x
        norm_y = np.linalg.norm(y)
        if norm_y == 0.0:
            raise DegenerateWindowError("matrix annihilates the iteration vector")
        lam = float(x @ y)
        x_new = y / norm_y
        residual = np.linalg.norm(a @ x_new - lam * x_new)
        x = x_new
        if abs(lam) > 0 and residual <= tol * abs(lam):
            break
    else:
        raise ConvergenceError(
            f"power iteration did not converge in {max_iter} iterations "
            f"(relative residual {residual / abs(lam) if lam else np.inf:.3e})"
        )

    if check_gap:
        lam2 = _second_eigenvalue_estimate(a, x, lam)
        if lam != 0 and (lam - lam2) / abs(lam) < _TIE_RTOL:
            warnings.warn(
                f"leading eigenvalues tied within tolerance ({lam:.6g} vs {lam2:.6g})",
                DegenerateSpectrumWarning,
                stacklevel=2,
            )

    beta = _fix_sign(x * np.sqrt(n))
    return lam, beta


def _second_eigenvalue_estimate(a: np.ndarray, v0: np.ndarray, lam0: float, iters: int = 200) -> float:
    """Power iteration on the deflated matrix; rough estimate is enough."""
    n = a.shape[0]
    x = np.ones(n)
    x[::2] = -1.0           # deterministic start unlikely to be orthogonal to v1
    x -= (x @ v0) * v0
    nx = np.linalg.norm(x)
    if nx == 0.0:
        return lam0
    x /= nx
    lam = 0.0
    for _ in range(iters):
        y = a @ x - lam0 * (v0 @ x) * v0
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        lam = float(x @ y)
        x = y / ny
    return lam


def full_spectrum(c: CovarianceMatrix) -> WindowSpectrum:
    """Dense eigendecomposition plus the derived market quantities."""
    n = c.n
    vals, vecs = np.linalg.eigh(c.c)
    lambda0 = float(vals[-1])
    if lambda0 <= 0:
        raise DegenerateWindowError("leading eigenvalue is not positive")
    degenerate = (lambda0 - vals[-2]) / abs(lambda0) < _TIE_RTOL if n > 1 else False
    if degenerate:
        warnings.warn(
            f"leading eigenvalues tied within tolerance ({lambda0:.6g} vs {vals[-2]:.6g})",
            DegenerateSpectrumWarning,
            stacklevel=2,
        )
    beta = _fix_sign(vecs[:, -1] * np.sqrt(n))
    bulk = vals[:-1][::-1].copy()

    r = c.returns
    means = r.mean(axis=1)
    v2 = float((np.trace(c.c) - np.sum(means**2)) / n)
    market_return = beta @ r / n
    return WindowSpectrum(
        center=c.window.center,
        t=c.window.length,
        lambda0=lambda0,
        beta=beta,
        bulk=bulk,
        v2=v2,
        market_var=lambda0 / n,
        market_return=market_return,
        center_date=c.center_date,
        degenerate=degenerate,
        mixed_sign=bool(np.any(beta <= 0)),
    )


def minimal_positive_window(
    rp: ReturnPanel,
    candidate_ts: list[int],
    step: int = 250,
) -> int:
    """Smallest candidate window length with all-positive betas everywhere.

    Scans every window center on the given step for each candidate length
    (ascending) and accepts the first length whose windows all have strictly
    positive beta components after sign fixing.  Raises
    NoPositiveWindowError with per-length violation counts if none does.
    """
    from .panels import iter_centers

    if sorted(candidate_ts) != list(candidate_ts):
        raise ValueError("candidate window lengths must be sorted ascending")
    violations: dict[int, int] = {}
    for t in candidate_ts:
        centers = iter_centers(rp.t0, t, step)
        if not centers:
            violations[t] = -1      # no valid window at this length
            continue
        bad = 0
        for center in centers:
            w = WindowSpec(center=center, length=t, step=step)
            _, beta = leading_eigenpair(covariance(rp, w), check_gap=False)
            if not np.all(beta > 0):
                bad += 1
        violations[t] = bad
        if bad == 0:
            return t
    raise NoPositiveWindowError(violations)


@dataclass
class RankOneDecomposition:
    """C = gamma gamma' + C1 with the scalars used by the expansion.

    e0 = gamma^2 is the unperturbed eigenvalue; the moments satisfy
    (gamma, C1^k gamma) = A_k gamma^2 for k = 1, 2, and
    a = sqrt(N/gamma^2) * C1 gamma is the first-order eigenvector tilt.
    """

    gamma: np.ndarray
    c1: np.ndarray
    e0: float
    a1: float
    a2: float
    a: np.ndarray

    @classmethod
    def from_parts(cls, gamma: np.ndarray, c1: np.ndarray) -> "RankOneDecomposition":
        gamma = np.asarray(gamma, dtype=float)
        c1 = np.asarray(c1, dtype=float)
        if not np.allclose(c1, c1.T, atol=1e-12):
            raise ValueError("C1 must be symmetric")
        e0 = float(gamma @ gamma)
        if e0 <= 0:
            raise ValueError("gamma.gamma must be positive")
        c1g = c1 @ gamma
        a1 = float(gamma @ c1g) / e0
        a2 = float(c1g @ c1g) / e0
        a = np.sqrt(len(gamma) / e0) * c1g
        return cls(gamma=gamma, c1=c1, e0=e0, a1=a1, a2=a2, a=a)

    @property
    def n(self) -> int:
        return len(self.gamma)


def perturb_eigenpair(d: RankOneDecomposition) -> tuple[float, np.ndarray]:
    """Second-order leading eigenvalue and first-order beta vector.

    lambda0 = gamma^2 + A1 + (A2 - A1^2)/gamma^2
    beta_i  = (1 - A1/gamma^2) sqrt(N/gamma^2) gamma_i + a_i/gamma^2

    Exact for C1 proportional to the identity.
    """
    lam = d.e0 + d.a1 + (d.a2 - d.a1**2) / d.e0
    beta = (1.0 - d.a1 / d.e0) * np.sqrt(d.n / d.e0) * d.gamma + d.a / d.e0
    return lam, beta


def perturb_bulk(d: RankOneDecomposition) -> tuple[np.ndarray, np.ndarray]:
    """Perturbative bulk eigenvalues and eigenvectors.

    The degenerate zero eigenspace of gamma gamma' is resolved by
    diagonalizing C1 restricted to the orthogonal complement of gamma,
    which makes the off-diagonal couplings e_nu.(C1 e_mu) vanish.  Then

        lambda_mu = e_mu.(C1 e_mu) - (e0.(C1 e_mu))^2 / gamma^2
        f_mu      = (1 - e0.(C1 e_mu)/gamma^2) e_mu

    Returns (lambda_mu sorted descending, matrix with f_mu as columns).
    """
    e0vec = d.gamma / np.sqrt(d.e0)
    q = null_space(e0vec[None, :])          # N x (N-1) orthonormal complement
    m = q.T @ d.c1 @ q
    m = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(m)
    basis = q @ vecs                         # columns satisfy the decoupling condition
    overlaps = e0vec @ (d.c1 @ basis)
    lam = vals - overlaps**2 / d.e0
    f = basis * (1.0 - overlaps / d.e0)
    order = np.argsort(lam)[::-1]
    return lam[order], f[:, order]
