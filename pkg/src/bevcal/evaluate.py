"""Calibration metrics: binned reliability, ECE, NLL, and regression curves.

Equal-width binning partitions [0, 1] into half-open intervals (the last
closed); equal-size binning splits the sorted predictions into groups whose
sizes differ by at most one, extending a bin rightward when a tied
prediction value would otherwise straddle a boundary. ECE is the
count-weighted mean absolute gap between a bin's mean confidence and its
empirical frequency.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import ValidationError

NLL_CLAMP = 1e-12


@dataclass(frozen=True)
class ReliabilityBin:
    lo: float
    hi: float
    count: int
    mean_confidence: float
    empirical_frequency: float


@dataclass(frozen=True)
class ReliabilityReport:
    binning: str  # equal_width | equal_size
    num_bins: int
    bins: tuple[ReliabilityBin, ...]
    ece: float
    nll: float

    def counts(self) -> list[int]:
        return [b.count for b in self.bins]


@dataclass(frozen=True)
class RegressionCurve:
    """101 (nominal quantile, observed frequency) points."""

    points: np.ndarray  # shape (101, 2)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(101, 2)
        if np.any(np.diff(pts[:, 1]) < 0):
            raise ValidationError("observed frequencies must be non-decreasing")
        if pts.min() < 0.0 or pts.max() > 1.0:
            raise ValidationError("curve coordinates must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    def sup_distance(self) -> float:
        """Largest gap to the diagonal (the curve's miscalibration in sup norm)."""
        return float(np.abs(self.points[:, 1] - self.points[:, 0]).max())


def _equal_size_boundaries(p_sorted: np.ndarray, num_bins: int) -> list[int]:
    n = p_sorted.size
    base, rem = divmod(n, num_bins)
    bounds = [0]
    cursor = 0
    for i in range(num_bins - 1):
        cursor += base + (1 if i < rem else 0)
        b = max(cursor, bounds[-1])
        while 0 < b < n and p_sorted[b - 1] == p_sorted[b]:
            b += 1
        bounds.append(min(b, n))
    bounds.append(n)
    return bounds


def compute_reliability(pairs, binning: str = "equal_width", num_bins: int = 10) -> ReliabilityReport:
    """Bin (probability, label) pairs and compute per-bin stats, ECE, and NLL."""
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise ValidationError("pairs must be non-empty")
    if num_bins < 1:
        raise ValidationError("num_bins must be >= 1")
    if binning not in ("equal_width", "equal_size"):
        raise ValidationError(f"unknown binning {binning!r}")
    p = pairs[:, 0]
    y = pairs[:, 1]
    n = p.size

    bins: list[ReliabilityBin] = []
    if binning == "equal_width":
        idx = np.minimum((p * num_bins).astype(np.int64), num_bins - 1)
        counts = np.bincount(idx, minlength=num_bins)
        psum = np.bincount(idx, weights=p, minlength=num_bins)
        ysum = np.bincount(idx, weights=y, minlength=num_bins)
        for i in range(num_bins):
            c = int(counts[i])
            bins.append(
                ReliabilityBin(
                    lo=i / num_bins,
                    hi=(i + 1) / num_bins,
                    count=c,
                    mean_confidence=psum[i] / c if c else float("nan"),
                    empirical_frequency=ysum[i] / c if c else float("nan"),
                )
            )
    else:
        order = np.argsort(p, kind="stable")
        ps = p[order]
        ys = y[order]
        bounds = _equal_size_boundaries(ps, num_bins)
        for i in range(num_bins):
            a, b = bounds[i], bounds[i + 1]
            c = b - a
            if c == 0:
                bins.append(ReliabilityBin(float("nan"), float("nan"), 0, float("nan"), float("nan")))
            else:
                bins.append(
                    ReliabilityBin(
                        lo=float(ps[a]),
                        hi=float(ps[b - 1]),
                        count=c,
                        mean_confidence=float(ps[a:b].mean()),
                        empirical_frequency=float(ys[a:b].mean()),
                    )
                )

    ece = sum(
        (b.count / n) * abs(b.mean_confidence - b.empirical_frequency)
        for b in bins
        if b.count
    )
    pc = np.clip(p, NLL_CLAMP, 1.0 - NLL_CLAMP)
    nll = float(-(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)).mean())
    return ReliabilityReport(binning, num_bins, tuple(bins), float(ece), nll)


def compute_regression_curve(quantiles) -> RegressionCurve:
    """Observed frequency of quantiles at or below each level k/100."""
    qs = np.sort(np.asarray(quantiles, dtype=np.float64))
    if qs.size == 0:
        raise ValidationError("quantiles must be non-empty")
    nominal = np.arange(101) / 100.0
    observed = np.searchsorted(qs, nominal, side="right") / qs.size
    return RegressionCurve(np.column_stack([nominal, observed]))


def ks_uniform_statistic(values) -> float:
    """Kolmogorov-Smirnov distance of the sample from the uniform on [0, 1]."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValidationError("values must be non-empty")
    n = v.size
    hi = np.arange(1, n + 1) / n
    lo = np.arange(n) / n
    return float(max((hi - v).max(), (v - lo).max()))


def write_reliability_csv(report: ReliabilityReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_index", "lo", "hi", "count", "mean_conf", "emp_freq"])
        for i, b in enumerate(report.bins):
            writer.writerow(
                [i, repr(b.lo), repr(b.hi), b.count, repr(b.mean_confidence), repr(b.empirical_frequency)]
            )


def write_regression_csv(curve: RegressionCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["nominal", "observed"])
        for nominal, observed in curve.points:
            writer.writerow([repr(float(nominal)), repr(float(observed))])
