"""Sector risk measure built from per-window betas and traded volumes.

R(t, s) sums beta_i(t) * V(t, i) over the stocks of sector s whose beta
strictly exceeds 1, then normalizes each window so the sectors sum to 1.
V(t, i) is the total traded share count of stock i inside window t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .panels import ReturnPanel, WindowSpec
from .spectral import WindowSpectrum

__all__ = ["RiskSeries", "TransitionEvent", "risk_measure", "transition_detector"]


@dataclass(frozen=True)
class TransitionEvent:
    """Dominant-sector change at one window."""

    index: int
    date: str | None
    sector_from: str
    sector_to: str


@dataclass
class RiskSeries:
    """Windows x sectors risk matrix with per-window normalization."""

    centers: list[int]
    center_dates: list[str | None]
    sectors: list[str]
    r: np.ndarray                 # W x S, rows sum to 1 or are flagged zero
    a_s: np.ndarray               # per-window normalization constant
    flagged: np.ndarray           # True where no beta exceeded 1

    @property
    def windows(self) -> int:
        return self.r.shape[0]


def risk_measure(
    spectra: list[WindowSpectrum],
    rp: ReturnPanel,
    merge_map: dict[str, str] | None = None,
    volumes: np.ndarray | None = None,
) -> RiskSeries:
    """Per-window, per-sector risk shares.

    The indicator is strict (beta > 1).  Windows where no stock clears the
    threshold get a zero row and a flag; normalization is impossible there.
    ``merge_map`` relabels sectors before grouping (used to merge small
    sectors such as IT and telecom).  ``volumes`` overrides the panel's
    share counts, e.g. with currency volumes.
    """
    vol = volumes if volumes is not None else rp.volumes
    if vol is None:
        raise ValueError("risk measure needs traded volumes")
    vol = np.asarray(vol, dtype=float)
    if vol.shape != rp.returns.shape:
        raise ValueError("volume matrix must match the return panel shape")
    if rp.sectors is None:
        raise ValueError("risk measure needs sector labels")
    missing = [t for t in rp.tickers if t not in rp.sectors]
    if missing:
        raise ValueError(f"tickers without sector label: {missing[:5]}{'...' if len(missing) > 5 else ''}")

    merge_map = merge_map or {}
    labels = [merge_map.get(rp.sectors[t], rp.sectors[t]) for t in rp.tickers]
    sectors = sorted(set(labels))
    sector_index = {s: k for k, s in enumerate(sectors)}
    col = np.array([sector_index[s] for s in labels])

    w = len(spectra)
    r = np.zeros((w, len(sectors)))
    a_s = np.zeros(w)
    flagged = np.zeros(w, dtype=bool)
    centers, center_dates = [], []
    for j, spec in enumerate(spectra):
        if spec.n != rp.n:
            raise ValueError("spectrum and panel stock counts differ")
        lo, hi = WindowSpec(spec.center, spec.t).bounds()
        if lo < 0 or hi > rp.t0:
            raise ValueError(f"window centered at {spec.center} exceeds the panel")
        v_window = vol[:, lo:hi].sum(axis=1)
        weight = np.where(spec.beta > 1.0, spec.beta, 0.0) * v_window
        total = np.zeros(len(sectors))
        np.add.at(total, col, weight)
        raw_sum = float(total.sum())
        if raw_sum <= 0.0:
            flagged[j] = True
            a_s[j] = np.nan
        else:
            a_s[j] = 1.0 / raw_sum
            r[j] = total * a_s[j]
        centers.append(spec.center)
        center_dates.append(spec.center_date)

    return RiskSeries(
        centers=centers,
        center_dates=center_dates,
        sectors=sectors,
        r=r,
        a_s=a_s,
        flagged=flagged,
    )


def transition_detector(
    rs: RiskSeries,
    threshold: float,
) -> list[TransitionEvent]:
    """Regime changes of the dominant risk sector.

    A sector becomes the regime when its risk share exceeds the threshold;
    an event is recorded when a different sector later takes the regime
    over, dated at the first window where the new sector clears the
    threshold.  Windows where no sector exceeds the threshold (e.g. the
    disordered stretch between two regimes) do not end a regime by
    themselves, so both the old and the new maxima exceed the threshold in
    their own windows.
    """
    if rs.windows < 3:
        raise ValueError("need at least 3 windows to detect transitions")
    events: list[TransitionEvent] = []
    current: str | None = None
    for j in range(rs.windows):
        if rs.flagged[j]:
            continue
        k = int(np.argmax(rs.r[j]))
        if rs.r[j, k] <= threshold:
            continue
        sector = rs.sectors[k]
        if current is None:
            current = sector
        elif sector != current:
            events.append(TransitionEvent(j, rs.center_dates[j], current, sector))
            current = sector
    return events
