"""Power-law fits of error against density and regime segmentation of pruning curves."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

ERROR_FLOOR = 1e-16


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class PowerLawFit:
    c: float
    gamma: float
    window: tuple[float, float]
    r2: float
    n_points: int
    residual: float

    def predict(self, d):
        return self.c * np.asarray(d, dtype=float) ** (-self.gamma)

    def summary(self) -> str:
        lo, hi = self.window
        return (f"c = {self.c!r}\ngamma = {self.gamma!r}\nR2 = {self.r2!r}\n"
                f"window = [{lo!r}, {hi!r}]\npoints = {self.n_points}\n")


def _clean(d, eps, clamp: float):
    d = np.asarray(d, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if d.shape != eps.shape or d.ndim != 1:
        raise ValueError("density and error must be 1-D sequences of equal length")
    if np.any(d <= 0) or np.any(eps < 0) or not np.all(np.isfinite(d)) or not np.all(np.isfinite(eps)):
        raise ValueError("densities must be positive and errors non-negative and finite")
    if np.any(eps == 0):
        warnings.warn(f"zero errors clamped to {clamp:g} before log transform", RuntimeWarning, stacklevel=3)
        eps = np.maximum(eps, clamp)
    return d, eps


def fit_power_law(d: Sequence[float], eps: Sequence[float], window: tuple[float, float] | None = None,
                  clamp: float = ERROR_FLOOR) -> PowerLawFit:
    """Least squares of ``ln eps`` on ``ln d``: ``eps ~ c * d**(-gamma)``.

    ``window`` is an inclusive density interval ``(d_lo, d_hi)``; by default
    all points are used.
    """
    d, eps = _clean(d, eps, clamp)
    if window is not None:
        lo, hi = sorted(window)
        sel = (d >= lo) & (d <= hi)
        d, eps = d[sel], eps[sel]
    if d.size < 3:
        raise InsufficientDataError(f"need at least 3 points in the fit window, got {d.size}")
    # sorting makes the fit independent of input order, bit for bit
    order = np.lexsort((eps, d))
    x, y = np.log(d[order]), np.log(eps[order])
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise InsufficientDataError("all densities in the window are equal")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    res = y - (intercept + slope * x)
    ss_res = float(np.sum(res**2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return PowerLawFit(float(np.exp(intercept)), float(-slope), (float(d.min()), float(d.max())), r2, int(d.size),
                       float(np.sqrt(ss_res / d.size)))


@dataclass(frozen=True)
class RegimeSegmentation:
    """Index ranges into the density-sorted curve, plus plateau levels.

    ``low``, ``power`` and ``high`` are ``(start, stop)`` index pairs (stop
    exclusive) over points ordered by decreasing density.
    """
    density: np.ndarray
    error: np.ndarray
    low: tuple[int, int]
    power: tuple[int, int]
    high: tuple[int, int]
    eps_low: float
    eps_high: float
    ok: bool = True

    def interval(self, name: str) -> tuple[float, float] | None:
        a, b = getattr(self, name)
        if b <= a:
            return None
        return float(self.density[b - 1]), float(self.density[a])

    @property
    def power_window(self) -> tuple[float, float] | None:
        return self.interval("power")

    def labels(self) -> list[str]:
        out = []
        for i in range(len(self.density)):
            for name in ("low", "power", "high"):
                a, b = getattr(self, name)
                if a <= i < b:
                    out.append(name)
                    break
            else:
                out.append("")
        return out

    def n_low(self) -> int:
        return self.low[1] - self.low[0]

    def low_span(self) -> float:
        """Density range covered by the low-error plateau, ``d_first - d_last``."""
        iv = self.interval("low")
        return 0.0 if iv is None else iv[1] - iv[0]


def segment_regimes(d: Sequence[float], eps: Sequence[float], factor: float = 2.0,
                    low: tuple[float, float] | None = None, high: tuple[float, float] | None = None,
                    clamp: float = ERROR_FLOOR) -> RegimeSegmentation:
    """Split a pruning curve into low-error plateau, power-law region and high-error plateau.

    Points are ordered by decreasing density.  The low plateau is the longest
    prefix with ``eps <= factor * eps[0]``; the high plateau the longest
    remaining suffix with ``eps`` within a factor of the last (sparsest) error.
    Manual ``low``/``high`` density intervals override the automatic choice.
    ``ok`` is False when the result looks pathological (the middle region does
    not rise from the low plateau to the high one).
    """
    d, e = _clean(d, eps, clamp)
    if d.size < 5:
        raise InsufficientDataError("need at least 5 points to segment a pruning curve")
    if factor <= 1:
        raise ValueError("factor must exceed 1")
    order = np.argsort(-d, kind="stable")
    d, e = d[order], e[order]
    n = d.size

    if low is not None:
        lo, hi = sorted(low)
        inside = (d >= lo) & (d <= hi)
        n_low = int(np.argmin(inside)) if not inside.all() else n
    else:
        ref = e[0]
        above = e > factor * ref
        n_low = int(np.argmax(above)) if above.any() else n

    if high is not None:
        lo, hi = sorted(high)
        inside = (d >= lo) & (d <= hi)
        start_high = n - int(np.argmin(inside[::-1])) if not inside.all() else 0
    else:
        last = e[-1]
        band = (e <= factor * last) & (e >= last / factor)
        start_high = n - int(np.argmin(band[::-1])) if not band.all() else 0
    start_high = max(start_high, n_low)

    eps_low = float(np.mean(e[:n_low])) if n_low else float(e[0])
    eps_high = float(np.mean(e[start_high:])) if start_high < n else float(e[-1])
    ok = True
    mid = e[n_low:start_high]
    if mid.size:
        ok = bool(mid.max() >= eps_low and eps_high >= eps_low)
    return RegimeSegmentation(d, e, (0, n_low), (n_low, start_high), (start_high, n), eps_low, eps_high, ok)


def regimes_csv(seg: RegimeSegmentation) -> str:
    """CSV with columns d, epsilon, regime."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["d", "epsilon", "regime"])
    for d, e, lab in zip(seg.density, seg.error, seg.labels()):
        w.writerow([repr(float(d)), repr(float(e)), lab])
    return buf.getvalue()


def fit_pruning_curve(d, eps, factor: float = 2.0, window: tuple[float, float] | None = None):
    """Segment the curve and fit its power-law window (or an explicit one)."""
    seg = segment_regimes(d, eps, factor)
    win = window if window is not None else seg.power_window
    if win is None:
        raise InsufficientDataError("no power-law window found")
    return seg, fit_power_law(d, eps, win)


@dataclass(frozen=True)
class LayerExponent:
    layer: int
    fit: PowerLawFit | None
    segmentation: RegimeSegmentation
    note: str = ""

    @property
    def gamma(self) -> float:
        return 0.0 if self.fit is None else self.fit.gamma


def layerwise_exponents(curves: dict[int, tuple[Sequence[float], Sequence[float]]], factor: float = 2.0,
                        windows: dict[int, tuple[float, float]] | None = None) -> list[LayerExponent]:
    """gamma per layer from ``{layer: (layer_density, error)}`` curves.

    A layer whose error never leaves its low plateau gets gamma = 0.
    """
    out = []
    for layer in sorted(curves):
        d, eps = curves[layer]
        seg = segment_regimes(d, eps, factor)
        win = (windows or {}).get(layer) or seg.power_window
        if win is None or (seg.power[1] - seg.power[0]) < 3 and (windows or {}).get(layer) is None:
            out.append(LayerExponent(layer, None, seg, "no power-law region"))
            continue
        out.append(LayerExponent(layer, fit_power_law(d, eps, win), seg))
    return out


def exponent_table(rows: Sequence[LayerExponent]) -> str:
    """Plain-text comparison table: layer, gamma, R2, window."""
    lines = [f"{'layer':>5}  {'gamma':>8}  {'R2':>6}  window"]
    for r in rows:
        if r.fit is None:
            lines.append(f"{r.layer:>5}  {0.0:>8.3f}  {'-':>6}  {r.note}")
        else:
            lo, hi = r.fit.window
            lines.append(f"{r.layer:>5}  {r.fit.gamma:>8.3f}  {r.fit.r2:>6.3f}  [{lo:.4f}, {hi:.4f}]")
    return "\n".join(lines) + "\n"
