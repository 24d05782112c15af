"""Capture synchronization and band-limited resampling to 2 samples per symbol."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import correlate

SYNC_THRESHOLD = 0.2
KERNEL_TAPS = 64
KAISER_BETA = 8.6


class SyncError(RuntimeError):
    """No pilot found in the capture ("no sync")."""


@dataclass(frozen=True)
class SyncResult:
    integer: int
    fraction: float
    peak: float

    @property
    def delay(self) -> float:
        return self.integer + self.fraction


def synchronize(capture, pilot, threshold: float = SYNC_THRESHOLD) -> SyncResult:
    """Delay d such that capture[k + d] best matches pilot[k].

    Uses the normalized cross-correlation of mean-removed intensities
    (complex input is converted to |.|^2); the fraction comes from a
    parabola through the peak and its two neighbours.
    """
    c = np.asarray(capture)
    p = np.asarray(pilot)
    if np.iscomplexobj(c):
        c = np.abs(c) ** 2
    if np.iscomplexobj(p):
        p = np.abs(p) ** 2
    c = c.astype(float)
    p = p.astype(float) - np.mean(p)
    m = len(p)
    if m < 2 or len(c) < m:
        raise SyncError("no sync: capture shorter than the pilot")
    pn = np.linalg.norm(p)
    if pn == 0:
        raise SyncError("no sync: constant pilot")
    raw = correlate(c, p, mode="valid", method="fft")
    # local mean and energy of every length-m capture window
    cs = np.concatenate([[0.0], np.cumsum(c)])
    cs2 = np.concatenate([[0.0], np.cumsum(c * c)])
    s1 = cs[m:] - cs[:-m]
    s2 = cs2[m:] - cs2[:-m]
    var = np.maximum(s2 - s1 * s1 / m, 0.0)
    denom = np.sqrt(var) * pn
    ncc = np.where(denom > 1e-300 * max(1.0, pn), raw / np.where(denom > 0, denom, 1.0), 0.0)
    k = int(np.argmax(ncc))
    peak = float(ncc[k])
    if not peak >= threshold:
        raise SyncError(f"no sync: peak normalized correlation {peak:.3f} < {threshold}")
    frac = 0.0
    if 0 < k < len(ncc) - 1:
        y0, y1, y2 = ncc[k - 1], ncc[k], ncc[k + 1]
        den = y0 - 2 * y1 + y2
        if den < 0:
            frac = float(np.clip(0.5 * (y0 - y2) / den, -0.5, 0.5))
    return SyncResult(k, frac, peak)


@dataclass(frozen=True)
class Resampled:
    samples: np.ndarray
    phase_labels: np.ndarray  # 0 = on-symbol instant, 1 = between symbols
    trim: int  # requested outputs dropped for lack of input support
    first_index: int  # output index k of samples[0]


def _kernel(offsets, cutoff):
    """Kaiser-windowed sinc low-pass (cutoff relative to the input Nyquist)."""
    half = KERNEL_TAPS / 2
    win = np.where(np.abs(offsets) < half,
                   np.i0(KAISER_BETA * np.sqrt(np.clip(1 - (offsets / half) ** 2, 0, 1)))
                   / np.i0(KAISER_BETA), 0.0)
    return cutoff * np.sinc(cutoff * offsets) * win


def resample_to_2sps(samples, in_rate: float, symbol_rate: float, delay: float = 0.0,
                     n_out: int | None = None) -> Resampled:
    """Evaluate the band-limited signal at t = (k/2) T + delay, k = 0, 1, ...

    ``delay`` is in input samples. Outputs whose 64-tap kernel would run
    past either end of the input are dropped and counted in ``trim``.
    """
    x = np.asarray(samples)
    if in_rate < 2 * symbol_rate:
        raise ValueError("input rate must be at least 2 samples per symbol")
    step = in_rate / (2 * symbol_rate)  # input samples per output sample
    cutoff = min(1.0, 1.0 / step)
    if n_out is None:
        n_out = int(np.floor((len(x) - 1 - delay) / step)) + 1
    k = np.arange(n_out)
    pos = delay + k * step
    base = np.floor(pos).astype(int)
    half = KERNEL_TAPS // 2
    ok = (base - half + 1 >= 0) & (base + half < len(x))
    idx = np.nonzero(ok)[0]
    if len(idx) == 0:
        return Resampled(np.zeros(0, dtype=x.dtype), np.zeros(0, dtype=int), n_out, 0)
    keep = np.arange(idx[0], idx[-1] + 1)
    src = base[keep, None] + np.arange(-half + 1, half + 1)[None, :]
    w = _kernel(pos[keep, None] - src, cutoff)
    out = np.einsum("ij,ij->i", w, x[src])
    first = int(keep[0])
    labels = np.rint(pos[keep] / step).astype(int) % 2
    trim = n_out - len(keep)
    return Resampled(out, labels, int(trim), first)
