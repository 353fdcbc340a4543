"""Hot numeric kernels: path-to-tap accumulation onto the sample grid.

Two interchangeable backends:
  * "numba"  - @njit compiled loops (default when numba imports cleanly)
  * "numpy"  - pure-numpy vectorized fallback

Select with the environment variable ISACSIM_BACKEND=numba|numpy (anything
else, or unset, means auto).  ``benchmarks/bench_kernels.py`` compares both.

Kernel contracts: paths are described by a complex weight per path, separable
per-element transmit/receive phase factors (etx[P,S], erx[P,U]) and a delay
expressed in fractional sample bins.  Accumulation adds
weight[p] * etx[p,s] * erx[p,u] into out[u,s,bin(s)] either at the nearest
bin or spread with a Hann-windowed sinc interpolation kernel.
"""

from __future__ import annotations

import os

import numpy as np

SINC_HALF = 32  # windowed-sinc support: 2*SINC_HALF + 1 = 65 taps


def _select_backend():
    requested = os.environ.get("ISACSIM_BACKEND", "auto").strip().lower()
    if requested not in ("numba", "numpy", "auto", ""):
        raise ValueError(f"ISACSIM_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numpy":
        return "numpy", None
    try:
        import numba
    except ImportError:
        if requested == "numba":
            raise
        return "numpy", None
    return "numba", numba


BACKEND, _numba = _select_backend()


def _windowed_sinc(frac):
    """65-tap Hann-windowed sinc centred on fractional offset ``frac`` bins.

    Normalized to unit energy so a single discretized tap preserves power
    regardless of its sub-bin position.
    """
    k = np.arange(-SINC_HALF, SINC_HALF + 1, dtype=np.float64)
    x = k - frac
    h = np.sinc(x) * 0.5 * (1.0 + np.cos(np.pi * np.clip(x / (SINC_HALF + 1), -1, 1)))
    return h / np.sqrt(np.sum(h * h))


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _accumulate_nearest_numpy(weights, etx, erx, bins, out):
    n_bins = out.shape[2]
    keep = (bins >= 0) & (bins < n_bins)
    if not np.all(keep):
        weights, etx, erx, bins = weights[keep], etx[keep], erx[keep], bins[keep]
    # contrib[p,u,s] = w[p]*erx[p,u]*etx[p,s]
    contrib = weights[:, None, None] * erx[:, :, None] * etx[:, None, :]
    np.add.at(out.transpose(2, 0, 1), bins, contrib)


def _accumulate_sinc_numpy(weights, etx, erx, frac_bins, out):
    n_bins = out.shape[2]
    base = np.round(frac_bins).astype(np.int64)
    frac = frac_bins - base
    k = np.arange(-SINC_HALF, SINC_HALF + 1, dtype=np.float64)
    x = k[None, :] - frac[:, None]
    win = 0.5 * (1.0 + np.cos(np.pi * np.clip(x / (SINC_HALF + 1), -1, 1)))
    h = np.sinc(x) * win
    h /= np.sqrt(np.sum(h * h, axis=1))[:, None]
    contrib = weights[:, None, None] * erx[:, :, None] * etx[:, None, :]
    for off in range(2 * SINC_HALF + 1):
        b = base + (off - SINC_HALF)
        keep = (b >= 0) & (b < n_bins)
        if not np.any(keep):
            continue
        np.add.at(out.transpose(2, 0, 1), b[keep],
                  contrib[keep] * h[keep, off][:, None, None])


def _doppler_rotate_numpy(weights, doppler_hz, t):
    return weights * np.exp(2j * np.pi * doppler_hz * t)


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if BACKEND == "numba":
    from numba import njit

    @njit(cache=True)
    def _accumulate_nearest_numba(weights, etx, erx, bins, out):  # pragma: no cover
        n_paths = weights.shape[0]
        n_u = erx.shape[1]
        n_s = etx.shape[1]
        n_bins = out.shape[2]
        for p in range(n_paths):
            b = bins[p]
            if b < 0 or b >= n_bins:
                continue
            w = weights[p]
            for u in range(n_u):
                wu = w * erx[p, u]
                for s in range(n_s):
                    out[u, s, b] += wu * etx[p, s]

    @njit(cache=True)
    def _accumulate_sinc_numba(weights, etx, erx, frac_bins, out):  # pragma: no cover
        n_paths = weights.shape[0]
        n_u = erx.shape[1]
        n_s = etx.shape[1]
        n_bins = out.shape[2]
        half = SINC_HALF
        width = 2 * half + 1
        h = np.empty(width)
        for p in range(n_paths):
            base = int(np.round(frac_bins[p]))
            frac = frac_bins[p] - base
            energy = 0.0
            for i in range(width):
                x = (i - half) - frac
                if x == 0.0:
                    s = 1.0
                else:
                    s = np.sin(np.pi * x) / (np.pi * x)
                xc = x / (half + 1)
                if xc > 1.0:
                    xc = 1.0
                elif xc < -1.0:
                    xc = -1.0
                val = s * 0.5 * (1.0 + np.cos(np.pi * xc))
                h[i] = val
                energy += val * val
            inv_norm = 1.0 / np.sqrt(energy)
            w = weights[p]
            for i in range(width):
                b = base + i - half
                if b < 0 or b >= n_bins:
                    continue
                wh = w * (h[i] * inv_norm)
                for u in range(n_u):
                    wu = wh * erx[p, u]
                    for s in range(n_s):
                        out[u, s, b] += wu * etx[p, s]

    @njit(cache=True)
    def _doppler_rotate_numba(weights, doppler_hz, t):  # pragma: no cover
        out = np.empty_like(weights)
        for p in range(weights.shape[0]):
            out[p] = weights[p] * np.exp(1j * (2.0 * np.pi * doppler_hz[p] * t))
        return out


# ---------------------------------------------------------------------------
# public dispatch
# ---------------------------------------------------------------------------

def accumulate_taps(weights, etx, erx, frac_bins, n_bins, mode="nearest_bin"):
    """Accumulate per-path contributions into a (U, S, n_bins) CIR array.

    weights : complex128[P]      per-path amplitude (all scalar factors folded in)
    etx     : complex128[P, S]   transmit element phase factors
    erx     : complex128[P, U]   receive element phase factors
    frac_bins : float64[P]       delay in fractional sample bins
    mode    : "nearest_bin" or "sinc_windowed"
    """
    weights = np.ascontiguousarray(weights, dtype=np.complex128)
    etx = np.ascontiguousarray(etx, dtype=np.complex128)
    erx = np.ascontiguousarray(erx, dtype=np.complex128)
    frac_bins = np.ascontiguousarray(frac_bins, dtype=np.float64)
    out = np.zeros((erx.shape[1], etx.shape[1], int(n_bins)), dtype=np.complex128)
    if weights.size == 0:
        return out
    if mode == "nearest_bin":
        bins = np.round(frac_bins).astype(np.int64)
        if BACKEND == "numba":
            _accumulate_nearest_numba(weights, etx, erx, bins, out)
        else:
            _accumulate_nearest_numpy(weights, etx, erx, bins, out)
    elif mode == "sinc_windowed":
        if BACKEND == "numba":
            _accumulate_sinc_numba(weights, etx, erx, frac_bins, out)
        else:
            _accumulate_sinc_numpy(weights, etx, erx, frac_bins, out)
    else:
        raise ValueError(f"unknown discretization mode {mode!r}")
    return out


def doppler_rotate(weights, doppler_hz, t):
    """weights * exp(j 2 pi f_p t) for one time snapshot."""
    weights = np.ascontiguousarray(weights, dtype=np.complex128)
    doppler_hz = np.ascontiguousarray(doppler_hz, dtype=np.float64)
    if weights.size == 0 or t == 0.0:
        return weights.copy() if t == 0.0 else weights
    if BACKEND == "numba":
        return _doppler_rotate_numba(weights, doppler_hz, float(t))
    return _doppler_rotate_numpy(weights, doppler_hz, float(t))
