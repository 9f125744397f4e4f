"""Classical (rho, theta) Hough line detector used as the baseline.

The surface is thresholded, every lit pixel votes for all lines through it
(``rho = x cos(theta) + y sin(theta)``), local accumulator maxima above a
vote threshold survive a 3x3 non-maximum suppression, and the surviving
infinite lines are drawn into a mask.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyInput, InvalidConfig


@dataclass(frozen=True)
class HoughParams:
    rho_step: float = 1.0
    theta_step: float = math.pi / 180
    accumulator_threshold: int = 40
    binarize_threshold: float = 0.1
    line_raster_thickness: float = 1.0

    def __post_init__(self):
        if min(self.rho_step, self.theta_step, self.accumulator_threshold, self.line_raster_thickness) <= 0:
            raise InvalidConfig(f"Hough parameters must be positive: {self}")
        if not 0 < self.binarize_threshold < 1:
            raise InvalidConfig("binarize_threshold must lie in (0, 1)")
        n = math.pi / self.theta_step
        if abs(n - round(n)) > 1e-6 * max(n, 1):
            raise InvalidConfig("theta_step must divide pi into a whole number of bins")

    @property
    def n_theta(self) -> int:
        return int(round(math.pi / self.theta_step))


DEFAULT_GRID = {
    "binarize_threshold": [0.5, 0.8, 0.9, 0.95, 0.98],
    "accumulator_threshold": [10, 20, 30, 45, 60, 80],
    "line_raster_thickness": [1.0, 2.0, 3.0],
}


def _as_image(surface) -> np.ndarray:
    if isinstance(surface, tuple):
        vals = np.stack([getattr(s, "values", s) for s in surface])
    else:
        vals = getattr(surface, "values", surface)
    vals = np.asarray(vals, dtype=np.float64)
    if vals.ndim == 3:
        vals = vals.max(axis=0)  # polarity channels: latest of either sign
    return vals


class Accumulator:
    """Vote table for one binary image; rows are theta bins, columns rho bins.

    Rho bins are laid out around the integer pixel nearest the image centre,
    so a 90-degree rotation of an odd-sized image permutes the table exactly.
    Reported rho values are in the usual corner-origin coordinates.
    """

    def __init__(self, binary: np.ndarray, rho_step: float, theta_step: float):
        h, w = binary.shape
        self.shape_hw = (h, w)
        self.rho_step = rho_step
        self.n_theta = int(round(math.pi / theta_step))
        self.thetas = np.arange(self.n_theta) * theta_step
        self.origin = ((w - 1) // 2, (h - 1) // 2)
        ox, oy = self.origin
        self.center = int(math.ceil(math.hypot(max(ox, w - 1 - ox), max(oy, h - 1 - oy)) / rho_step))
        self.n_rho = 2 * self.center + 1
        ys, xs = np.nonzero(binary)
        rho = np.outer(np.cos(self.thetas), xs - ox) + np.outer(np.sin(self.thetas), ys - oy)
        idx = np.rint(rho / rho_step).astype(np.int64) + self.center
        flat = idx + (np.arange(self.n_theta) * self.n_rho)[:, None]
        self.votes = np.bincount(flat.ravel(), minlength=self.n_theta * self.n_rho).reshape(
            self.n_theta, self.n_rho
        )

    def rho_of(self, i: int, j: int) -> float:
        """Corner-origin rho of cell ``(theta bin i, rho bin j)``."""
        ox, oy = self.origin
        th = self.thetas[i]
        return float((j - self.center) * self.rho_step + ox * math.cos(th) + oy * math.sin(th))

    def _neighbours(self, i, j):
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                ii, jj = i + di, j + dj
                # theta wraps at pi with rho negated
                if ii < 0:
                    ii, jj = self.n_theta - 1, self.n_rho - 1 - jj
                elif ii >= self.n_theta:
                    ii, jj = 0, self.n_rho - 1 - jj
                if 0 <= jj < self.n_rho:
                    yield ii, jj

    def peaks(self, threshold: float) -> list[tuple[int, int]]:
        """Cells at or above ``threshold`` that are 3x3 local maxima.

        On plateaus the cell with the smallest ``(theta, rho)`` index wins.
        """
        acc = self.votes
        out = []
        for i, j in zip(*np.nonzero(acc >= threshold)):
            v = acc[i, j]
            ok = True
            for ii, jj in self._neighbours(i, j):
                u = acc[ii, jj]
                if u > v or (u == v and (ii, jj) < (i, j)):
                    ok = False
                    break
            if ok:
                out.append((int(i), int(j)))
        return out

    def lines(self, threshold: float) -> list[tuple[float, float]]:
        """``(rho, theta)`` of every surviving peak."""
        return [(self.rho_of(i, j), float(self.thetas[i])) for i, j in self.peaks(threshold)]


def rasterize_lines(lines, shape, thickness: float = 1.0) -> np.ndarray:
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    mask = np.zeros(shape, dtype=np.uint8)
    for rho, theta in lines:
        d = np.abs(xs * math.cos(theta) + ys * math.sin(theta) - rho)
        mask[d < 0.5 * thickness] = 1
    return mask


def hough_lines(surface, params: HoughParams = HoughParams()) -> list[tuple[float, float]]:
    img = _as_image(surface)
    acc = Accumulator(img >= params.binarize_threshold, params.rho_step, params.theta_step)
    return acc.lines(params.accumulator_threshold)


def hough_detect(surface, params: HoughParams = HoughParams()) -> np.ndarray:
    """Binary mask of the detected lines; empty when nothing clears the threshold."""
    img = _as_image(surface)
    return rasterize_lines(hough_lines(img, params), img.shape, params.line_raster_thickness)


def _grid_points(base: HoughParams, grid: dict) -> list[HoughParams]:
    keys = list(grid)
    return [replace(base, **dict(zip(keys, combo))) for combo in itertools.product(*(grid[k] for k in keys))]


def tune_hough(dev_set, grid: dict | None = None, base: HoughParams = HoughParams()) -> HoughParams:
    """Grid point with the best mean Dice on ``dev_set`` (pairs of surface, mask).

    Ties go to the earliest grid point.
    """
    from .metrics import dice

    if not dev_set:
        raise EmptyInput("empty dev set")
    points = _grid_points(base, DEFAULT_GRID if grid is None else grid)
    if not points:
        raise EmptyInput("empty parameter grid")
    scores = np.zeros(len(points))
    for surface, gt in dev_set:
        img = _as_image(surface)
        cache: dict = {}
        for k, hp in enumerate(points):
            key = (hp.binarize_threshold, hp.rho_step, hp.theta_step)
            if key not in cache:
                cache[key] = Accumulator(img >= hp.binarize_threshold, hp.rho_step, hp.theta_step)
            lines = cache[key].lines(hp.accumulator_threshold)
            scores[k] += dice(rasterize_lines(lines, img.shape, hp.line_raster_thickness), gt)
    return points[int(np.argmax(scores))]
