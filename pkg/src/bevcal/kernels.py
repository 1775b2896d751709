"""Hot numeric kernels: pool-adjacent-violators and weighted 2D Gaussian EM.

Both kernels exist twice: a numba ``@njit`` build and a pure-numpy build.
The active backend is chosen at import time. Set ``BEVCAL_DISABLE_NUMBA=1``
to force the numpy path (useful for debugging and for the benchmark in
``benchmarks/bench_kernels.py``, which times both).
"""

from __future__ import annotations

import math
import os

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)


def _numba_disabled() -> bool:
    return os.environ.get("BEVCAL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")


try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _numba_disabled()


def backend_name() -> str:
    """Name of the active kernel backend, "numba" or "numpy"."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# Pool-adjacent-violators
# ---------------------------------------------------------------------------

def _pava_loop(values, weights):
    # Stack-based PAVA: merge any block whose mean exceeds its successor's.
    n = values.shape[0]
    means = np.empty(n, dtype=np.float64)
    wsum = np.empty(n, dtype=np.float64)
    starts = np.empty(n, dtype=np.int64)
    nblocks = 0
    for i in range(n):
        cur_mean = values[i]
        cur_w = weights[i]
        cur_start = i
        while nblocks > 0 and means[nblocks - 1] > cur_mean:
            tot = wsum[nblocks - 1] + cur_w
            cur_mean = (means[nblocks - 1] * wsum[nblocks - 1] + cur_mean * cur_w) / tot
            cur_w = tot
            cur_start = starts[nblocks - 1]
            nblocks -= 1
        means[nblocks] = cur_mean
        wsum[nblocks] = cur_w
        starts[nblocks] = cur_start
        nblocks += 1
    fitted = np.empty(n, dtype=np.float64)
    for b in range(nblocks):
        end = starts[b + 1] if b + 1 < nblocks else n
        for j in range(starts[b], end):
            fitted[j] = means[b]
    return fitted


pava_numpy = _pava_loop
if HAVE_NUMBA:
    pava_numba = njit(cache=True, nogil=True)(_pava_loop)

pava = pava_numba if USE_NUMBA else pava_numpy


# ---------------------------------------------------------------------------
# Weighted EM for 2D Gaussian mixtures
# ---------------------------------------------------------------------------
#
# Points carry integer multiplicities (stratified pixel counts); the E/M
# steps weight every sum by them. Covariances get cov_reg added to the
# diagonal each M-step; a collapsed component is re-inflated rather than
# treated as an error. The returned log-likelihood trace is non-decreasing:
# an update that would lower it (possible because the regularized M-step is
# not the exact maximizer) is rolled back and iteration stops.

def _em_loop(points, counts, means0, var0, max_iters, tol, cov_reg):
    n = points.shape[0]
    k = means0.shape[0]
    total_w = 0.0
    for i in range(n):
        total_w += counts[i]

    means = means0.copy()
    covs = np.empty((k, 2, 2), dtype=np.float64)
    for j in range(k):
        covs[j, 0, 0] = var0
        covs[j, 0, 1] = 0.0
        covs[j, 1, 0] = 0.0
        covs[j, 1, 1] = var0
    mix = np.full(k, 1.0 / k, dtype=np.float64)

    prev_means = means.copy()
    prev_covs = covs.copy()
    prev_mix = mix.copy()

    resp = np.empty((n, k), dtype=np.float64)
    logp = np.empty(k, dtype=np.float64)
    log_coef = np.empty(k, dtype=np.float64)
    inv = np.empty((k, 3), dtype=np.float64)  # inv00, inv01, inv11 per component
    ll_trace = np.empty(max_iters, dtype=np.float64)

    n_ll = 0
    prev_ll = -np.inf
    for _ in range(max_iters):
        # E-step under the current parameters, accumulating the weighted LL.
        for j in range(k):
            a = covs[j, 0, 0]
            b = covs[j, 0, 1]
            d = covs[j, 1, 1]
            det = a * d - b * b
            while det <= 1e-12:
                a += cov_reg
                d += cov_reg
                det = a * d - b * b
            covs[j, 0, 0] = a
            covs[j, 1, 1] = d
            inv[j, 0] = d / det
            inv[j, 1] = -b / det
            inv[j, 2] = a / det
            if mix[j] > 0.0:
                log_coef[j] = math.log(mix[j]) - 0.5 * math.log(det) - _LOG_2PI
            else:
                log_coef[j] = -np.inf

        ll = 0.0
        for i in range(n):
            hi = -np.inf
            for j in range(k):
                dr = points[i, 0] - means[j, 0]
                dc = points[i, 1] - means[j, 1]
                q = dr * dr * inv[j, 0] + 2.0 * dr * dc * inv[j, 1] + dc * dc * inv[j, 2]
                logp[j] = log_coef[j] - 0.5 * q
                if logp[j] > hi:
                    hi = logp[j]
            s = 0.0
            for j in range(k):
                s += math.exp(logp[j] - hi)
            lse = hi + math.log(s)
            ll += counts[i] * lse
            for j in range(k):
                resp[i, j] = math.exp(logp[j] - lse)

        if ll < prev_ll:
            # Roll back the regularized update that lost likelihood.
            means = prev_means
            covs = prev_covs
            mix = prev_mix
            break
        ll_trace[n_ll] = ll
        n_ll += 1
        if n_ll > 1 and (ll - prev_ll) < tol * max(1.0, abs(prev_ll)):
            break

        prev_means = means.copy()
        prev_covs = covs.copy()
        prev_mix = mix.copy()
        prev_ll = ll

        # M-step with multiplicity weights.
        for j in range(k):
            nj = 0.0
            mr = 0.0
            mc = 0.0
            for i in range(n):
                w = counts[i] * resp[i, j]
                nj += w
                mr += w * points[i, 0]
                mc += w * points[i, 1]
            mix[j] = nj / total_w
            denom = nj if nj > 1e-300 else 1e-300
            mr /= denom
            mc /= denom
            means[j, 0] = mr
            means[j, 1] = mc
            crr = 0.0
            crc = 0.0
            ccc = 0.0
            for i in range(n):
                w = counts[i] * resp[i, j]
                dr = points[i, 0] - mr
                dc = points[i, 1] - mc
                crr += w * dr * dr
                crc += w * dr * dc
                ccc += w * dc * dc
            covs[j, 0, 0] = crr / denom + cov_reg
            covs[j, 0, 1] = crc / denom
            covs[j, 1, 0] = crc / denom
            covs[j, 1, 1] = ccc / denom + cov_reg

    return means, covs, mix, ll_trace[:n_ll].copy()


def _em_numpy(points, counts, means0, var0, max_iters, tol, cov_reg):
    """Vectorized fallback with the same contract as the njit loop."""
    n = points.shape[0]
    k = means0.shape[0]
    total_w = float(counts.sum())

    means = means0.copy()
    covs = np.tile(np.eye(2) * var0, (k, 1, 1))
    mix = np.full(k, 1.0 / k)

    prev = (means.copy(), covs.copy(), mix.copy())
    ll_trace: list[float] = []
    prev_ll = -np.inf
    for _ in range(max_iters):
        a = covs[:, 0, 0]
        b = covs[:, 0, 1]
        d = covs[:, 1, 1]
        det = a * d - b * b
        while np.any(det <= 1e-12):
            bad = det <= 1e-12
            covs[bad, 0, 0] += cov_reg
            covs[bad, 1, 1] += cov_reg
            a = covs[:, 0, 0]
            d = covs[:, 1, 1]
            det = a * d - b * b
        dr = points[:, None, 0] - means[None, :, 0]
        dc = points[:, None, 1] - means[None, :, 1]
        q = (dr * dr * (d / det) - 2.0 * dr * dc * (b / det) + dc * dc * (a / det))
        with np.errstate(divide="ignore"):
            logp = np.log(mix)[None, :] - 0.5 * np.log(det)[None, :] - _LOG_2PI - 0.5 * q
        hi = logp.max(axis=1)
        lse = hi + np.log(np.exp(logp - hi[:, None]).sum(axis=1))
        ll = float(np.dot(counts, lse))
        resp = np.exp(logp - lse[:, None])

        if ll < prev_ll:
            means, covs, mix = prev
            break
        ll_trace.append(ll)
        if len(ll_trace) > 1 and (ll - prev_ll) < tol * max(1.0, abs(prev_ll)):
            break

        prev = (means.copy(), covs.copy(), mix.copy())
        prev_ll = ll

        w = counts[:, None] * resp
        nj = w.sum(axis=0)
        mix = nj / total_w
        denom = np.maximum(nj, 1e-300)
        means = (w.T @ points) / denom[:, None]
        dr = points[:, None, 0] - means[None, :, 0]
        dc = points[:, None, 1] - means[None, :, 1]
        covs = np.empty((k, 2, 2))
        covs[:, 0, 0] = (w * dr * dr).sum(axis=0) / denom + cov_reg
        covs[:, 0, 1] = (w * dr * dc).sum(axis=0) / denom
        covs[:, 1, 0] = covs[:, 0, 1]
        covs[:, 1, 1] = (w * dc * dc).sum(axis=0) / denom + cov_reg

    return means, covs, mix, np.asarray(ll_trace)


em_numpy = _em_numpy
if HAVE_NUMBA:
    em_numba = njit(cache=True, nogil=True)(_em_loop)

em_fit = em_numba if USE_NUMBA else em_numpy
