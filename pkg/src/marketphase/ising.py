"""Diluted Ising agent model and its mean-field solution.

A agents each trade one of S sectors: spin +1 and -1 mark the two risky
sectors, 0 stands for any of the S-2 neutral ones (a dynamical dilution,
since neutral agents drop out of the mean).  Agents resample their spin
with heat-bath probabilities

    w(+-1) ~ exp(+-g (m + h)),   w(0) ~ S - 2,

where m is the mean spin and h an external field.  The update rule is
implemented as the exact single-site conditional of the equilibrium weight
exp[A g (m^2/2 + h m)] (the probabilities above are its large-A limit), so
the chain's stationary distribution matches the equilibrium distribution
even for small agent counts.

For large A the model solves analytically: the order parameter obeys

    m0 = 2 sinh(g(m0+h)) / (S - 2 + 2 cosh(g(m0+h)))

with free energy per agent ln(S-2+2cosh(g(m0+h))) - g m0^2/2.  For S > 6
ordered and disordered branches coexist between a saddle-node point g1 and
the spinodal g2 = S/2, with equal free energy at gc in between: a
first-order transition.  For S <= 6 the transition at S/2 is continuous.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .rng import generator

__all__ = [
    "IsingConfig",
    "IsingTrajectory",
    "MeanFieldSolution",
    "PhaseScan",
    "simulate",
    "mean_field_solve",
    "phase_scan",
    "free_energy_curve",
    "boltzmann_log_weight",
]

_COEX_TOL = 1e-9      # |delta lnZ| per agent treated as coexistence
_ROOT_TOL = 1e-12


@dataclass(frozen=True)
class IsingConfig:
    """Simulation parameters.

    ``field_schedule`` holds (t_start, t_end, h) pulses, inclusive on both
    ends, where t counts sweeps starting at 1 (t=0 is the initial state).
    One time step is one full sweep of A single-agent updates in random
    scan order.
    """

    a: int
    s: int
    g: float
    steps: int
    seed: int = 0
    field_schedule: tuple = ()
    init: str = "all_plus"          # all_plus | all_minus | uniform

    def __post_init__(self):
        if self.a < 1:
            raise ValueError("need at least one agent")
        if self.s < 3:
            raise ValueError("need at least 3 sectors")
        if self.g < 0:
            raise ValueError("coupling must be non-negative")
        if self.steps < 1:
            raise ValueError("need at least one sweep")
        if self.init not in ("all_plus", "all_minus", "uniform"):
            raise ValueError(f"unknown init {self.init!r}")
        for pulse in self.field_schedule:
            t0, t1, _ = pulse
            if t1 < t0:
                raise ValueError(f"field pulse {pulse} ends before it starts")

    def field_at(self, t: int) -> float:
        return sum(h for (t0, t1, h) in self.field_schedule if t0 <= t <= t1)


@dataclass
class IsingTrajectory:
    """Per-sweep order parameter and sector occupation fractions.

    Index 0 is the initial state; index t the state after sweep t.
    ``r_neutral_each`` is the fraction per neutral sector, R(0)/(S-2).
    """

    m: np.ndarray
    r_plus: np.ndarray
    r_minus: np.ndarray
    s: int
    spins: np.ndarray = field(repr=False, default=None)    # final configuration
    configs: np.ndarray = field(repr=False, default=None)  # per-sweep, if recorded

    @property
    def r_neutral_each(self) -> np.ndarray:
        return (1.0 - self.r_plus - self.r_minus) / (self.s - 2)


def boltzmann_log_weight(n_plus: int, n_minus: int, a: int, s: int, g: float, h: float = 0.0) -> float:
    """Log equilibrium weight of an (n+, n-) occupation class, without the
    multinomial factor: A g (m^2/2 + h m) plus the neutral degeneracy."""
    m = (n_plus - n_minus) / a
    n0 = a - n_plus - n_minus
    return a * g * (0.5 * m * m + h * m) + n0 * np.log(s - 2)


def _prob_table(a: int, s: int, g: float, h: float) -> np.ndarray:
    """Cumulative heat-bath probabilities for each rest magnetization.

    Row index is M_rest + A where M_rest is the spin sum of the other
    agents; columns are cumulative probabilities for choosing +1, then -1
    (neutral takes the rest).  Derived from the exact conditional of the
    equilibrium weight: log w(sigma) = g (M_rest + sigma)^2 / (2A)
    + g h (M_rest + sigma), with w(0) carrying the S-2 degeneracy.
    """
    m_rest = np.arange(-a, a + 1, dtype=float)
    lw_plus = g * (m_rest + 1.0) ** 2 / (2 * a) + g * h * (m_rest + 1.0)
    lw_minus = g * (m_rest - 1.0) ** 2 / (2 * a) + g * h * (m_rest - 1.0)
    lw_zero = g * m_rest**2 / (2 * a) + g * h * m_rest + np.log(s - 2)
    top = np.maximum(np.maximum(lw_plus, lw_minus), lw_zero)
    wp = np.exp(lw_plus - top)
    wm = np.exp(lw_minus - top)
    w0 = np.exp(lw_zero - top)
    total = wp + wm + w0
    table = np.empty((2 * a + 1, 2))
    table[:, 0] = wp / total
    table[:, 1] = (wp + wm) / total
    return table


def simulate(cfg: IsingConfig, record_spins: bool = False) -> IsingTrajectory:
    """Run the heat-bath dynamics and record one point per sweep.

    With ``record_spins`` the trajectory also stores the configuration
    after every sweep (rows of ``configs``), which exhaustive
    detailed-balance checks need; leave it off for large systems.
    """
    rng = generator(cfg.seed, 57)
    a, s = cfg.a, cfg.s
    if cfg.init == "all_plus":
        spins = np.ones(a, dtype=np.int8)
    elif cfg.init == "all_minus":
        spins = -np.ones(a, dtype=np.int8)
    else:
        spins = rng.integers(-1, 2, size=a).astype(np.int8)
    m_total = int(spins.sum())
    n_plus = int(np.sum(spins == 1))
    n_minus = int(np.sum(spins == -1))

    m = np.empty(cfg.steps + 1)
    r_plus = np.empty(cfg.steps + 1)
    r_minus = np.empty(cfg.steps + 1)
    m[0] = m_total / a
    r_plus[0] = n_plus / a
    r_minus[0] = n_minus / a
    configs = np.empty((cfg.steps + 1, a), dtype=np.int8) if record_spins else None
    if record_spins:
        configs[0] = spins

    # group consecutive sweeps with the same field so random draws batch up
    fields = [cfg.field_at(t) for t in range(1, cfg.steps + 1)]
    t = 1
    while t <= cfg.steps:
        h = fields[t - 1]
        block_end = t
        while block_end < cfg.steps and fields[block_end] == h:
            block_end += 1
        n_sweeps = block_end - t + 1
        table = _prob_table(a, s, cfg.g, h)
        agents = rng.integers(0, a, size=n_sweeps * a)
        draws = rng.random(n_sweeps * a)
        k = 0
        for sweep in range(t, block_end + 1):
            for _ in range(a):
                j = agents[k]
                u = draws[k]
                k += 1
                old = int(spins[j])
                rest = m_total - old
                row = table[rest + a]
                new = 1 if u < row[0] else (-1 if u < row[1] else 0)
                if new != old:
                    if old == 1:
                        n_plus -= 1
                    elif old == -1:
                        n_minus -= 1
                    if new == 1:
                        n_plus += 1
                    elif new == -1:
                        n_minus += 1
                    spins[j] = new
                    m_total = rest + new
            m[sweep] = m_total / a
            r_plus[sweep] = n_plus / a
            r_minus[sweep] = n_minus / a
            if record_spins:
                configs[sweep] = spins
        t = block_end + 1

    return IsingTrajectory(m=m, r_plus=r_plus, r_minus=r_minus, s=s, spins=spins, configs=configs)


# ---------------------------------------------------------------------------
# mean-field solution


def _mf_rhs(m: float, s: int, g: float, h: float) -> float:
    x = g * (m + h)
    return 2.0 * np.sinh(x) / (s - 2.0 + 2.0 * np.cosh(x))


def _mf_residual(m: float, s: int, g: float, h: float) -> float:
    return m - _mf_rhs(m, s, g, h)


def lnz_per_agent(m: float, s: int, g: float, h: float = 0.0) -> float:
    """Free energy branch value ln(S-2+2cosh(g(m+h))) - g m^2 / 2."""
    return float(np.log(s - 2.0 + 2.0 * np.cosh(g * (m + h))) - 0.5 * g * m * m)


@dataclass
class MeanFieldSolution:
    """All self-consistent order parameters at one (S, g, h).

    ``roots`` are sorted ascending; ``lnz`` aligns with them, as do the
    risky-sector fractions.  ``stable`` indexes the branch with maximal
    free energy.  ``phase`` is one of disordered, ordered,
    metastable-ordered, metastable-disordered, coexistence.
    """

    s: int
    g: float
    h: float
    roots: list[float]
    lnz: list[float]
    r_plus: list[float]
    r_minus: list[float]
    stable: int
    phase: str

    @property
    def m0(self) -> float:
        return self.roots[self.stable]


def _find_roots(s: int, g: float, h: float, grid_points: int) -> list[float]:
    lo = 0.0 if h == 0.0 else -1.5
    ms = np.linspace(lo, 1.5, grid_points)
    vals = _mf_residual(ms, s, g, h)
    roots: list[float] = []
    if h == 0.0:
        roots.append(0.0)
    for i in range(len(ms) - 1):
        a_, b_ = vals[i], vals[i + 1]
        if a_ == 0.0:
            r = float(ms[i])
        elif a_ * b_ < 0.0:
            r = float(brentq(_mf_residual, ms[i], ms[i + 1], args=(s, g, h), xtol=_ROOT_TOL))
        else:
            continue
        if all(abs(r - q) > 1e-7 for q in roots):
            roots.append(r)
    return sorted(roots)


def mean_field_solve(s: int, g: float, h: float = 0.0, grid_points: int = 3001) -> MeanFieldSolution:
    """Locate every solution of the self-consistency equation and classify.

    Roots come from sign-change bracketing on a fine grid polished by
    Brent's method; each satisfies the fixed-point equation to 1e-10.
    The phase label compares the free energy of the nonzero branch with the
    disordered one (h = 0): below the saddle-node only the disordered
    phase exists; between the saddle-node and the crossing the ordered
    branch is metastable; past the crossing the roles flip; beyond
    g2 = S/2 the disordered solution is unstable and the phase is ordered.
    """
    if s < 3:
        raise ValueError("need at least 3 sectors")
    roots = _find_roots(s, g, h, grid_points)
    if not roots:
        raise RuntimeError(f"no self-consistent solution found for S={s}, g={g}, h={h}")
    for r in roots:
        if abs(_mf_residual(r, s, g, h)) > 1e-10:
            raise RuntimeError(f"root polishing failed near m0={r:.6f} (S={s}, g={g})")

    lnz = [lnz_per_agent(m, s, g, h) for m in roots]
    x = [g * (m + h) for m in roots]
    denom = [s - 2.0 + 2.0 * np.cosh(xi) for xi in x]
    r_plus = [float(np.exp(xi) / d) for xi, d in zip(x, denom)]
    r_minus = [float(np.exp(-xi) / d) for xi, d in zip(x, denom)]
    stable = int(np.argmax(lnz))

    ordered_roots = [m for m in roots if abs(m) > 1e-7]
    if not ordered_roots:
        phase = "disordered"
    elif h != 0.0:
        phase = "ordered" if abs(roots[stable]) > 1e-7 else "metastable-ordered"
    else:
        m_star = max(ordered_roots, key=abs)
        gap = lnz_per_agent(m_star, s, g, h) - lnz_per_agent(0.0, s, g, h)
        if abs(gap) <= _COEX_TOL:
            phase = "coexistence"
        elif gap < 0.0:
            phase = "metastable-ordered"
        elif g < s / 2.0:
            phase = "metastable-disordered"
        else:
            phase = "ordered"

    return MeanFieldSolution(
        s=s, g=g, h=h, roots=roots, lnz=lnz,
        r_plus=r_plus, r_minus=r_minus, stable=stable, phase=phase,
    )


@dataclass(frozen=True)
class PhaseScan:
    """Critical couplings and the ordered fraction at the crossing."""

    s: int
    g1: float
    gc: float
    g2: float
    r_at_gc: float
    order: str           # "first" or "second"


def _has_ordered_root(s: int, g: float, grid_points: int = 3001) -> bool:
    return any(m > 1e-7 for m in _find_roots(s, g, 0.0, grid_points))


def phase_scan(s: int, g_bounds: tuple[float, float] | None = None, tol: float = 1e-9) -> PhaseScan:
    """Map the transition structure at h = 0.

    g1 is the saddle-node where a nonzero root first appears, gc the free
    energy crossing of the ordered and disordered branches, g2 = S/2 the
    analytic spinodal from linearizing the fixed point at zero.  For
    S <= 6 the three coincide and the transition is second order with
    R = 1/S at the critical point.
    """
    if s < 3:
        raise ValueError("need at least 3 sectors")
    g2 = s / 2.0
    if s <= 6:
        return PhaseScan(s=s, g1=g2, gc=g2, g2=g2, r_at_gc=1.0 / s, order="second")

    lo, hi = g_bounds if g_bounds is not None else (g2 - 1.0, g2 + 1.0)
    lo = max(lo, 1e-6)
    if _has_ordered_root(s, lo):
        raise ValueError(f"lower bound g={lo} already has an ordered root; widen the scan")
    # bisect for the saddle-node on root existence
    a_, b_ = lo, g2
    while b_ - a_ > tol:
        mid = 0.5 * (a_ + b_)
        if _has_ordered_root(s, mid):
            b_ = mid
        else:
            a_ = mid
    g1 = b_

    def lnz_gap(g: float) -> float:
        sol = mean_field_solve(s, g)
        ordered = [m for m in sol.roots if m > 1e-7]
        if not ordered:
            return -1.0
        m_star = max(ordered)
        return lnz_per_agent(m_star, s, g) - lnz_per_agent(0.0, s, g)

    a_, b_ = g1 + 1e-12, g2
    if lnz_gap(b_) <= 0:
        raise RuntimeError(f"free energies do not cross below the spinodal for S={s}")
    while b_ - a_ > tol:
        mid = 0.5 * (a_ + b_)
        if lnz_gap(mid) > 0:
            b_ = mid
        else:
            a_ = mid
    gc = 0.5 * (a_ + b_)

    sol = mean_field_solve(s, gc)
    m_star = max(m for m in sol.roots if m > 1e-7)
    k = sol.roots.index(m_star)
    return PhaseScan(s=s, g1=g1, gc=gc, g2=g2, r_at_gc=sol.r_plus[k], order="first")


def free_energy_curve(
    s: int,
    g: float,
    m0_grid: np.ndarray | None = None,
    h: float = 0.0,
) -> np.ndarray:
    """Curve of (omega = g m0, -lnZ/(g A)) over the order-parameter grid.

    Minima of the curve sit at the self-consistent roots.
    """
    if m0_grid is None:
        m0_grid = np.linspace(0.0, 1.5, 301)
    m0_grid = np.asarray(m0_grid, dtype=float)
    values = np.array([-lnz_per_agent(m, s, g, h) / g for m in m0_grid])
    return np.column_stack([g * m0_grid, values])
