"""Spatio-temporal contrast (STC) filtering and exponential time surfaces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, InvalidTau
from .events import EventRecording

DEFAULT_TAU_US = 30_000
DEFAULT_WINDOW_US = 33_000

_NEVER = np.iinfo(np.int64).min // 2


@dataclass(frozen=True)
class StcParams:
    radius_px: int = 1
    window_us: int = 5_000
    min_support: int = 1
    bidirectional: bool = False

    def __post_init__(self):
        if self.radius_px < 1 or self.window_us <= 0 or self.min_support < 1:
            raise InvalidConfig(f"invalid STC parameters {self}")


@dataclass
class TimeSurface:
    width: int
    height: int
    values: np.ndarray  # (height, width) float64 in [0, 1]
    t_ref: int
    tau_us: float


def _support_counts(t, x, y, width, height, radius, window, k, count_ties):
    """Neighbour support per event from strictly earlier events in ``(t - window, t)``.

    With ``count_ties`` the other events sharing the same timestamp are counted
    too. Counts saturate near ``k``: only the ``k`` most recent timestamps are
    kept per pixel, which is all a ``>= k`` test needs.
    """
    n = len(t)
    counts = np.zeros(n, dtype=np.int64)
    if n == 0:
        return counts
    r = radius
    side = 2 * r + 1
    grid = np.full((height + 2 * r, width + 2 * r, k), _NEVER, dtype=np.int64)
    starts = np.concatenate(([0], np.flatnonzero(np.diff(t)) + 1, [n]))
    tl, xl, yl = t.tolist(), x.tolist(), y.tolist()
    for g in range(len(starts) - 1):
        i, j = int(starts[g]), int(starts[g + 1])
        lo = tl[i] - window
        for m in range(i, j):
            nb = grid[yl[m]:yl[m] + side, xl[m]:xl[m] + side]
            counts[m] = np.count_nonzero(nb > lo)
        if count_ties and j - i > 1:
            gx = x[i:j]
            gy = y[i:j]
            near = (np.abs(gx[:, None] - gx[None, :]) <= r) & (np.abs(gy[:, None] - gy[None, :]) <= r)
            counts[i:j] += near.sum(axis=1) - 1
        for m in range(i, j):
            cell = grid[yl[m] + r, xl[m] + r]
            cell[np.argmin(cell)] = tl[m]
    return counts


def stc_filter(rec: EventRecording, params: StcParams = StcParams()) -> EventRecording:
    """Keep events with at least ``min_support`` other events nearby in space and time.

    Neighbourhood is the Chebyshev ball of ``radius_px``. In causal mode the
    supporting events lie in ``(t - window_us, t]``; in bidirectional mode in
    ``(t - window_us, t + window_us)``.
    """
    if len(rec) == 0:
        return rec
    t = rec.t.astype(np.int64)
    x = rec.x.astype(np.int64)
    y = rec.y.astype(np.int64)
    args = (rec.width, rec.height, params.radius_px, params.window_us, params.min_support)
    support = _support_counts(t, x, y, *args, count_ties=True)
    if params.bidirectional:
        # future side: mirror time and reverse the stream, ties already counted
        future = _support_counts(-t[::-1], x[::-1], y[::-1], *args, count_ties=False)[::-1]
        support = np.minimum(support, params.min_support) + np.minimum(future, params.min_support)
    return rec.select(support >= params.min_support)


def build_time_surface(
    rec: EventRecording,
    t_ref: int,
    tau_us: float = DEFAULT_TAU_US,
    polarity_mode: str = "separate",
    window_us: int | None = None,
):
    """Exponentially decayed map of the most recent event time at each pixel.

    ``S = exp(-(t_ref - T) / tau)`` where an event exists, otherwise 0. Events
    after ``t_ref`` are ignored, as are events older than ``window_us`` when it
    is given. ``polarity_mode="separate"`` returns ``(positive, negative)``.
    """
    if not tau_us > 0:
        raise InvalidTau(f"tau must be positive, got {tau_us}")
    keep = rec.t <= t_ref
    if window_us is not None:
        keep &= rec.t > t_ref - window_us
    t, x, y, p = rec.t[keep], rec.x[keep], rec.y[keep], rec.p[keep]

    def surface(sel):
        latest = np.full((rec.height, rec.width), -1, dtype=np.int64)
        np.maximum.at(latest, (y[sel], x[sel]), t[sel])
        hit = latest >= 0
        values = np.zeros(latest.shape, dtype=np.float64)
        values[hit] = np.exp(-(t_ref - latest[hit]) / tau_us)
        return TimeSurface(rec.width, rec.height, values, t_ref, tau_us)

    if polarity_mode == "merged":
        return surface(np.ones(len(t), dtype=bool))
    if polarity_mode == "separate":
        return surface(p > 0), surface(p < 0)
    raise ValueError(f"unknown polarity mode {polarity_mode!r}")


def surface_channels(
    rec: EventRecording,
    t_ref: int,
    tau_us: float = DEFAULT_TAU_US,
    polarity_mode: str = "separate",
    window_us: int | None = None,
) -> np.ndarray:
    """Network input stack of shape ``(C, H, W)``; C is 2 for separate, 1 for merged."""
    out = build_time_surface(rec, t_ref, tau_us, polarity_mode, window_us)
    if polarity_mode == "merged":
        return out.values[None]
    return np.stack([out[0].values, out[1].values])
