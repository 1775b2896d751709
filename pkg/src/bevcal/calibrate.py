"""The three calibration maps: isotonic (pixel-wise), beta, and quantile.

Isotonic fitting pools tied scores, runs pool-adjacent-violators, and
applies the result with linear interpolation between block representative
scores (a pure step mode is available); outputs are floored at
1/(number of fitting pairs) because the fit cannot support smaller
frequencies. Beta calibration is the three-parameter logistic fit on
(ln p, -ln(1-p)) with the non-negativity constraint restored by pinning
and refitting. The quantile map is the 101-knot empirical CDF of the
fitting quantiles with anchored endpoints.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import ProbGrid, ValidationError

CALIB_FORMAT = "bevcal-calib"
CALIB_VERSION = 1


# ---------------------------------------------------------------------------
# Isotonic regression
# ---------------------------------------------------------------------------

def _pooled_pava(pairs: np.ndarray):
    """Tie-pool, run PAVA, and return (unique scores, weights, fitted, inverse)."""
    scores = pairs[:, 0]
    labels = pairs[:, 1]
    uniq, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=labels, minlength=uniq.size)
    means = sums / counts
    fitted = kernels.pava(means, counts.astype(np.float64))
    return uniq, counts.astype(np.float64), fitted, inverse


def isotonic_fitted_values(pairs) -> np.ndarray:
    """The least-squares monotone fit evaluated at every input pair, input order."""
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    _, _, fitted, inverse = _pooled_pava(pairs)
    return fitted[inverse]


@dataclass(frozen=True)
class IsotonicMap:
    breakpoints: np.ndarray  # strictly increasing block representative scores
    values: np.ndarray  # non-decreasing block values in [0, 1]
    clip_floor: float
    interpolate: bool = True

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.float64)
        if bp.size != vals.size or bp.size == 0:
            raise ValidationError("breakpoints and values must be non-empty and equal length")
        if bp.size > 1 and not np.all(np.diff(bp) > 0):
            raise ValidationError("breakpoints must be strictly increasing")
        if np.any(np.diff(vals) < 0):
            raise ValidationError("values must be non-decreasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    def apply(self, scores):
        """Calibrated output for scores; scalar in, scalar out."""
        s = np.asarray(scores, dtype=np.float64)
        if self.interpolate:
            out = np.interp(s, self.breakpoints, self.values)
        else:
            idx = np.clip(np.searchsorted(self.breakpoints, s, side="right") - 1, 0, None)
            out = self.values[idx]
        out = np.maximum(out, self.clip_floor)
        return float(out) if np.isscalar(scores) else out


def fit_isotonic(pairs) -> IsotonicMap:
    """Pool-adjacent-violators fit of binary labels on scores."""
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    if pairs.shape[0] < 2:
        raise ValidationError("isotonic fit needs at least 2 pairs")
    if not np.all(np.isfinite(pairs[:, 0])):
        raise ValidationError("scores must be finite")
    uniq, weights, fitted, _ = _pooled_pava(pairs)

    # Collapse PAVA blocks: one breakpoint per block at its weighted mean score.
    breaks = np.flatnonzero(np.diff(fitted) != 0) + 1
    starts = np.concatenate(([0], breaks))
    ends = np.concatenate((breaks, [uniq.size]))
    reps = np.array(
        [np.average(uniq[s:e], weights=weights[s:e]) for s, e in zip(starts, ends)]
    )
    vals = fitted[starts]
    return IsotonicMap(reps, vals, clip_floor=1.0 / pairs.shape[0])


def calibrate_grid(grid: ProbGrid, cal_map: IsotonicMap) -> ProbGrid:
    """Apply the map to every cell independently."""
    out = np.clip(cal_map.apply(grid.cells.ravel()), 0.0, 1.0)
    return ProbGrid(grid.meta, grid.timestep, out.reshape(grid.cells.shape))


# ---------------------------------------------------------------------------
# Beta calibration
# ---------------------------------------------------------------------------

_P_CLAMP = 1e-6


@dataclass(frozen=True)
class BetaMap:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValidationError("a and b must be non-negative for a monotone map")

    def apply(self, p):
        q = np.clip(np.asarray(p, dtype=np.float64), _P_CLAMP, 1.0 - _P_CLAMP)
        z = self.a * np.log(q) - self.b * np.log1p(-q) + self.c
        out = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
        return float(out) if np.isscalar(p) else out


def _newton_logistic(X: np.ndarray, y: np.ndarray, max_iters: int, tol: float) -> np.ndarray:
    n, d = X.shape
    theta = np.zeros(d)
    base = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    theta[-1] = math.log(base / (1.0 - base))
    grad_norm = np.inf
    for _ in range(max_iters):
        z = X @ theta
        mu = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))
        grad = X.T @ (mu - y) / n
        grad_norm = float(np.abs(grad).max())
        if grad_norm < tol:
            return theta
        w = np.maximum(mu * (1.0 - mu), 1e-12)
        hess = (X * w[:, None]).T @ X / n + 1e-10 * np.eye(d)
        theta = theta - np.linalg.solve(hess, grad)
    raise RuntimeError(
        f"beta calibration did not converge in {max_iters} iterations "
        f"(gradient norm {grad_norm:.3e})"
    )


def fit_beta(pairs, max_iters: int = 10_000, tol: float = 1e-8) -> BetaMap:
    """Maximum-likelihood beta calibration with the pin-and-refit constraint."""
    pairs = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    if pairs.shape[0] < 10:
        raise ValidationError("beta fit needs at least 10 pairs")
    p = np.clip(pairs[:, 0], _P_CLAMP, 1.0 - _P_CLAMP)
    y = pairs[:, 1]
    f1 = np.log(p)
    f2 = -np.log1p(-p)
    ones = np.ones_like(p)

    theta = _newton_logistic(np.column_stack([f1, f2, ones]), y, max_iters, tol)
    a, b, c = theta
    if a < 0:
        theta = _newton_logistic(np.column_stack([f2, ones]), y, max_iters, tol)
        a, b, c = 0.0, theta[0], theta[1]
    elif b < 0:
        theta = _newton_logistic(np.column_stack([f1, ones]), y, max_iters, tol)
        a, b, c = theta[0], 0.0, theta[1]
    if a < 0 or b < 0:
        theta = _newton_logistic(ones[:, None], y, max_iters, tol)
        a, b, c = 0.0, 0.0, theta[0]
    return BetaMap(float(a), float(b), float(c))


# ---------------------------------------------------------------------------
# Quantile-map calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuantileMap:
    nominal: np.ndarray  # 101 levels k/100
    empirical: np.ndarray  # non-decreasing, anchored at 0 and 1

    def __post_init__(self):
        nominal = np.asarray(self.nominal, dtype=np.float64)
        empirical = np.asarray(self.empirical, dtype=np.float64)
        if nominal.size != 101 or empirical.size != 101:
            raise ValidationError("quantile map must hold 101 grid points")
        if empirical[0] != 0.0 or empirical[-1] != 1.0:
            raise ValidationError("quantile map endpoints must be anchored at 0 and 1")
        if np.any(np.diff(empirical) < 0):
            raise ValidationError("empirical frequencies must be non-decreasing")
        object.__setattr__(self, "nominal", nominal)
        object.__setattr__(self, "empirical", empirical)

    def apply(self, q):
        out = np.interp(np.asarray(q, dtype=np.float64), self.nominal, self.empirical)
        return float(out) if np.isscalar(q) else out


def fit_quantile_map(quantiles) -> QuantileMap:
    """Empirical frequency of the fitting quantiles at each level k/100."""
    qs = np.sort(np.asarray(quantiles, dtype=np.float64))
    if qs.size < 100:
        raise ValidationError("quantile map needs at least 100 observations")
    nominal = np.arange(101) / 100.0
    empirical = np.searchsorted(qs, nominal, side="right") / qs.size
    empirical[0] = 0.0
    empirical[100] = 1.0
    return QuantileMap(nominal, empirical)


# ---------------------------------------------------------------------------
# .calib serialization
# ---------------------------------------------------------------------------

def save_map(cal_map, path, metadata: dict | None = None) -> None:
    """Write a fitted map as a versioned .calib text file (bit-exact reload)."""
    if isinstance(cal_map, IsotonicMap):
        kind = "isotonic"
        params = {
            "breakpoints": cal_map.breakpoints.tolist(),
            "values": cal_map.values.tolist(),
            "clip_floor": cal_map.clip_floor,
            "interpolate": cal_map.interpolate,
        }
    elif isinstance(cal_map, BetaMap):
        kind = "beta"
        params = {"a": cal_map.a, "b": cal_map.b, "c": cal_map.c}
    elif isinstance(cal_map, QuantileMap):
        kind = "quantile"
        params = {"nominal": cal_map.nominal.tolist(), "empirical": cal_map.empirical.tolist()}
    else:
        raise TypeError(f"not a calibration map: {type(cal_map).__name__}")
    doc = {
        "format": CALIB_FORMAT,
        "version": CALIB_VERSION,
        "kind": kind,
        "params": params,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_map(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CALIB_FORMAT:
        raise ValidationError(f"not a calibration file: {path}")
    if doc.get("version") != CALIB_VERSION:
        raise ValidationError(f"unsupported calibration file version {doc.get('version')}")
    params = doc["params"]
    kind = doc["kind"]
    if kind == "isotonic":
        return IsotonicMap(
            np.asarray(params["breakpoints"]),
            np.asarray(params["values"]),
            params["clip_floor"],
            params.get("interpolate", True),
        )
    if kind == "beta":
        return BetaMap(params["a"], params["b"], params["c"])
    if kind == "quantile":
        return QuantileMap(np.asarray(params["nominal"]), np.asarray(params["empirical"]))
    raise ValidationError(f"unknown calibration kind {kind!r}")
