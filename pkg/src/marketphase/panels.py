"""Price/volume panels, normalized log-returns, and centered windows."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .rng import generator

__all__ = [
    "PricePanel",
    "ReturnPanel",
    "WindowSpec",
    "PanelError",
    "load_panel",
    "compute_returns",
    "slice_window",
    "iter_centers",
    "generate_synthetic_panel",
    "DEFAULT_SECTORS",
]

# Generic GICS/TRBC-style sector labels used for synthetic panels.
DEFAULT_SECTORS = [
    "Energy",
    "Materials",
    "Industrials",
    "Consumer Discretionary",
    "Consumer Staples",
    "Health Care",
    "Financials",
    "Information Technology",
    "Telecommunications",
    "Utilities",
]


class PanelError(ValueError):
    """Malformed or inconsistent panel input."""


@dataclass
class PricePanel:
    """Aligned close-price panel: N tickers over T0+1 trading days."""

    tickers: list[str]
    dates: list[str]
    close: np.ndarray                      # N x (T0+1), strictly positive
    volume: np.ndarray | None = None       # N x (T0+1), non-negative
    sectors: dict[str, str] | None = None
    dropped: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.tickers)

    def __post_init__(self):
        self.close = np.asarray(self.close, dtype=float)
        if self.close.shape != (len(self.tickers), len(self.dates)):
            raise PanelError(
                f"close shape {self.close.shape} does not match "
                f"{len(self.tickers)} tickers x {len(self.dates)} dates"
            )
        if np.any(self.close <= 0) or not np.all(np.isfinite(self.close)):
            raise PanelError("prices must be strictly positive and finite")
        if any(a >= b for a, b in zip(self.dates, self.dates[1:])):
            raise PanelError("dates must be strictly increasing")
        if self.volume is not None:
            self.volume = np.asarray(self.volume, dtype=float)
            if self.volume.shape != self.close.shape:
                raise PanelError("volume shape does not match close shape")
            if np.any(self.volume < 0):
                raise PanelError("volumes must be non-negative")


@dataclass
class ReturnPanel:
    """Log-return panel rescaled so that sum_tau sum_i r_i^2(tau) = N*T0.

    The trailing date of each price pair labels the return, so ``dates`` has
    length T0.  ``normalization_factor`` is the scalar the raw log returns
    were multiplied with (None for a degenerate all-zero panel); raw returns
    are recoverable as ``returns / normalization_factor``.
    """

    tickers: list[str]
    dates: list[str]
    returns: np.ndarray                    # N x T0
    normalization_factor: float | None
    degenerate: bool = False
    volumes: np.ndarray | None = None      # N x T0, same date axis as returns
    sectors: dict[str, str] | None = None

    @property
    def n(self) -> int:
        return self.returns.shape[0]

    @property
    def t0(self) -> int:
        return self.returns.shape[1]


@dataclass(frozen=True)
class WindowSpec:
    """Centered window of ``length`` return days.

    The window convention is half-open with integer division:
    rows ``[center - length//2, center - length//2 + length)``, so the
    window always holds exactly ``length`` days and is centered for even
    lengths.  ``step`` is the spacing between consecutive centers.
    """

    center: int
    length: int
    step: int = 250

    def bounds(self) -> tuple[int, int]:
        lo = self.center - self.length // 2
        return lo, lo + self.length

    def inside(self, t0: int) -> bool:
        lo, hi = self.bounds()
        return lo >= 0 and hi <= t0


def iter_centers(t0: int, length: int, step: int) -> list[int]:
    """All valid window centers for a panel of t0 return days."""
    if length > t0:
        return []
    first = length // 2
    last = t0 - length + length // 2
    return list(range(first, last + 1, step))


def _read_long_csv(path, value_col: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={"date": str, "ticker": str})
    except Exception as exc:
        raise PanelError(f"cannot parse {path}: {exc}") from exc
    expected = {"date", "ticker", value_col}
    if not expected.issubset(df.columns):
        raise PanelError(f"{path}: expected columns {sorted(expected)}, got {list(df.columns)}")
    dup = df.duplicated(subset=["date", "ticker"])
    if dup.any():
        row = df[dup].iloc[0]
        raise PanelError(f"{path}: duplicate (date,ticker) rows, first at date={row['date']} ticker={row['ticker']}")
    return df


def load_panel(price_csv, volume_csv=None, sector_csv=None) -> PricePanel:
    """Load and align a close-price panel from long-format CSV files.

    Tickers with any missing price date are dropped and listed in
    ``PricePanel.dropped``.  Non-positive prices and duplicate
    (date, ticker) rows are errors.
    """
    df = _read_long_csv(price_csv, "close")
    bad = df[~(df["close"] > 0)]
    if len(bad):
        row = bad.iloc[0]
        raise PanelError(
            f"{price_csv}: non-positive price {row['close']} at date={row['date']} ticker={row['ticker']}"
        )

    wide = df.pivot(index="date", columns="ticker", values="close").sort_index()
    full = wide.columns[wide.notna().all(axis=0)]
    dropped = sorted(set(wide.columns) - set(full))
    wide = wide[full]
    if wide.shape[1] == 0:
        raise PanelError(f"{price_csv}: no ticker has complete price coverage")
    tickers = list(wide.columns)
    dates = [str(d) for d in wide.index]

    volume = None
    if volume_csv is not None:
        vdf = _read_long_csv(volume_csv, "volume")
        vwide = vdf.pivot(index="date", columns="ticker", values="volume").sort_index()
        missing = [t for t in tickers if t not in vwide.columns]
        if missing:
            raise PanelError(f"{volume_csv}: no volume data for tickers {missing}")
        vwide = vwide.reindex(index=wide.index)[tickers]
        if vwide.isna().any().any():
            t = vwide.columns[vwide.isna().any(axis=0)][0]
            raise PanelError(f"{volume_csv}: missing volume dates for ticker {t}")
        volume = vwide.to_numpy().T

    sectors = None
    if sector_csv is not None:
        sdf = pd.read_csv(sector_csv, dtype=str)
        if not {"ticker", "sector"}.issubset(sdf.columns):
            raise PanelError(f"{sector_csv}: expected columns ['ticker', 'sector']")
        sectors = dict(zip(sdf["ticker"], sdf["sector"]))

    return PricePanel(
        tickers=tickers,
        dates=dates,
        close=wide.to_numpy().T,
        volume=volume,
        sectors=sectors,
        dropped=dropped,
    )


def compute_returns(panel: PricePanel) -> ReturnPanel:
    """Daily log returns, globally rescaled to sum r^2 = N*T0.

    Per-stock means are not subtracted.  A constant-price (all-zero return)
    panel is flagged degenerate and left unscaled.
    """
    raw = np.diff(np.log(panel.close), axis=1)
    n, t0 = raw.shape
    ss = float(np.sum(raw * raw))
    if ss == 0.0:
        factor, degenerate, returns = None, True, raw
    else:
        factor = float(np.sqrt(n * t0 / ss))
        degenerate = False
        returns = raw * factor
    return ReturnPanel(
        tickers=list(panel.tickers),
        dates=list(panel.dates[1:]),
        returns=returns,
        normalization_factor=factor,
        degenerate=degenerate,
        volumes=None if panel.volume is None else panel.volume[:, 1:],
        sectors=panel.sectors,
    )


def slice_window(rp: ReturnPanel, w: WindowSpec) -> ReturnPanel:
    """Sub-panel over one window; the slice is not re-normalized."""
    if not w.inside(rp.t0):
        lo, hi = w.bounds()
        raise PanelError(f"window [{lo}, {hi}) exceeds panel bounds [0, {rp.t0})")
    lo, hi = w.bounds()
    return replace(
        rp,
        dates=rp.dates[lo:hi],
        returns=rp.returns[:, lo:hi],
        volumes=None if rp.volumes is None else rp.volumes[:, lo:hi],
    )


def generate_synthetic_panel(
    cfg,
    t0: int,
    seed: int,
    volume_mean: float = 1e6,
    volume_sigma: float = 0.5,
    sector_labels: list[str] | None = None,
) -> ReturnPanel:
    """Synthetic return panel from the stochastic volatility model.

    Returns are simulated from ``cfg`` (see svm.SvmConfig), then rescaled to
    the global normalization.  Volumes are log-normal with a per-stock
    constant mean; sector labels are assigned round-robin so sector analyses
    can run on synthetic data.  Bit-reproducible for a fixed seed.
    """
    from .svm import simulate_svm

    raw = simulate_svm(cfg, t0, seed)
    n = raw.shape[0]
    ss = float(np.sum(raw * raw))
    factor = float(np.sqrt(n * t0 / ss))
    returns = raw * factor

    # volume stream kept independent of the return stream
    rng = generator(seed, 112)
    # log-normal with mean volume_mean: mu = ln(mean) - sigma^2/2
    mu = np.log(volume_mean) - 0.5 * volume_sigma**2
    volumes = rng.lognormal(mean=mu, sigma=volume_sigma, size=(n, t0))

    labels = sector_labels if sector_labels is not None else DEFAULT_SECTORS
    tickers = [f"SYN{i:04d}" for i in range(n)]
    sectors = {t: labels[i % len(labels)] for i, t in enumerate(tickers)}
    dates = [d.strftime("%Y-%m-%d") for d in pd.bdate_range("1995-01-02", periods=t0)]

    return ReturnPanel(
        tickers=tickers,
        dates=dates,
        returns=returns,
        normalization_factor=factor,
        degenerate=False,
        volumes=volumes,
        sectors=sectors,
    )
