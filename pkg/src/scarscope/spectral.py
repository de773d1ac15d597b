"""Frequency spectra of OTOC series and light-cone front fits."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OTOC_THRESHOLD = 0.05
HOLEVO_THRESHOLD = 0.02


class SpectralError(ValueError):
    pass


@dataclass
class Spectrum:
    frequencies: np.ndarray
    magnitudes: np.ndarray
    window: str
    n: int
    dt: float
    meta: dict = field(default_factory=dict)

    @property
    def resolution(self):
        return 2 * np.pi / (self.n * self.dt)

    def parseval_energy(self):
        """(1/N) sum_k |X_k|^2 over the full two-sided transform."""
        w = np.full(len(self.magnitudes), 2.0)
        w[0] = 1.0
        if self.n % 2 == 0:
            w[-1] = 1.0
        return float(np.sum(w * self.magnitudes ** 2) / self.n)


def _check_uniform(times, dt):
    if times is None:
        return dt
    times = np.asarray(times, dtype=float)
    steps = np.diff(times)
    if len(steps) == 0 or np.ptp(steps) > 1e-9 * max(1.0, abs(steps[0])):
        raise SpectralError("time grid is not uniform")
    return float(steps[0]) if dt is None else dt


def fft_spectrum(series, dt=None, window="hann", times=None):
    """Magnitude spectrum of a mean-subtracted real series.

    Frequencies are angular (rad per unit time) with spacing 2 pi / (N dt).
    """
    x = np.asarray(series, dtype=float)
    dt = _check_uniform(times, dt)
    if dt is None or dt <= 0:
        raise SpectralError("need a positive dt or a uniform time grid")
    n = len(x)
    if n < 32:
        raise SpectralError("series too short for a spectrum (N < 32)")
    x = x - x.mean()
    if window == "hann":
        x = x * np.hanning(n)
    elif window not in ("none", None):
        raise SpectralError(f"unknown window {window!r}")
    mags = np.abs(np.fft.rfft(x))
    freqs = 2 * np.pi * np.fft.rfftfreq(n, d=dt)
    return Spectrum(freqs, mags, window or "none", n, dt)


def detect_peaks(spec, prominence_floor=0.2):
    """Interior local maxima above ``prominence_floor * max``, by frequency.

    A flat top counts once, at its lowest-frequency bin.
    """
    m = spec.magnitudes
    top = m.max() if len(m) else 0.0
    if top <= 0:
        return []
    peaks = []
    k = 1
    while k < len(m) - 1:
        if m[k] > m[k - 1]:
            r = k
            while r + 1 < len(m) and m[r + 1] == m[k]:
                r += 1
            if r + 1 < len(m) and m[r + 1] < m[k] and m[k] >= prominence_floor * top:
                peaks.append((float(spec.frequencies[k]), float(m[k])))
            k = r + 1
        else:
            k += 1
    return peaks


def dominant_frequency(spec, min_freq=0.0):
    """Frequency of the largest bin above ``min_freq``."""
    mask = spec.frequencies > min_freq
    if not np.any(mask):
        raise SpectralError("no bins above min_freq")
    k = np.flatnonzero(mask)[np.argmax(spec.magnitudes[mask])]
    return float(spec.frequencies[k])


def refined_peak_frequency(spec, min_freq=0.0):
    """Dominant frequency refined by a parabola through the top three bins."""
    mask = spec.frequencies > min_freq
    idx = np.flatnonzero(mask)
    k = idx[np.argmax(spec.magnitudes[idx])]
    if 0 < k < len(spec.magnitudes) - 1:
        a, b, c = spec.magnitudes[k - 1:k + 2]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
        return float(spec.frequencies[k] + shift * spec.resolution)
    return float(spec.frequencies[k])


def refine_peaks(spec, peaks):
    """Move each (frequency, magnitude) peak to its parabolic vertex.

    The shift stays within half a bin, so a refined peak still names the same
    local maximum.
    """
    out = []
    m = spec.magnitudes
    for f, mag in peaks:
        k = int(round((f - spec.frequencies[0]) / spec.resolution))
        if 0 < k < len(m) - 1:
            a, b, c = m[k - 1:k + 2]
            denom = a - 2 * b + c
            shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
            f = float(spec.frequencies[k] + shift * spec.resolution)
        out.append((f, mag))
    return out


def peaks_near(peaks, target, tol):
    return [p for p in peaks if abs(p[0] - target) <= tol]


# -- light cones --------------------------------------------------------------

@dataclass
class LightFront:
    sites: list
    distances: np.ndarray
    arrivals: np.ndarray          # NaN where the site never crosses
    threshold: float
    kind: str


@dataclass
class LightConeFit:
    distances: np.ndarray
    arrival_times: np.ndarray
    velocity: float
    intercept: float
    residual: float
    threshold: float = float("nan")


def deviation_metric(field):
    if field.kind == "otoc":
        return 1.0 - np.real(field.values)
    if field.kind == "holevo":
        return np.real(field.values)
    raise SpectralError(f"no deviation metric for field kind {field.kind!r}")


def _origin(field):
    for key in ("i", "encode_site"):
        if key in field.meta:
            return int(field.meta[key])
    raise SpectralError("field metadata lacks the origin site")


def lightcone_front(field, threshold=None, origin=None):
    """First threshold crossing per site, linearly interpolated in time."""
    if threshold is None:
        threshold = OTOC_THRESHOLD if field.kind == "otoc" else HOLEVO_THRESHOLD
    origin = _origin(field) if origin is None else origin
    metric = deviation_metric(field)
    t = field.times
    arrivals = np.full(len(field.sites), np.nan)
    for n in range(len(field.sites)):
        m = metric[n]
        if field.flags is not None:
            m = np.where(field.flags[n], -np.inf, m)
        above = np.flatnonzero(m >= threshold)
        if len(above) == 0:
            continue
        k = above[0]
        if k == 0 or not np.isfinite(m[k - 1]):
            arrivals[n] = t[k]
        else:
            frac = (threshold - m[k - 1]) / (m[k] - m[k - 1])
            arrivals[n] = t[k - 1] + frac * (t[k] - t[k - 1])
    dist = np.abs(np.asarray(field.sites) - origin).astype(float)
    return LightFront(list(field.sites), dist, arrivals, float(threshold), field.kind)


def fit_velocity(front, min_distance=1, max_distance=None):
    """Least squares t = d / v + c over sites that have an arrival."""
    d = np.asarray(front.distances, dtype=float)
    a = np.asarray(front.arrivals, dtype=float)
    keep = np.isfinite(a) & (d >= min_distance)
    if max_distance is not None:
        keep &= d <= max_distance
    d, a = d[keep], a[keep]
    if len(d) < 4:
        raise SpectralError(f"need at least 4 sites with arrivals, have {len(d)}")
    if np.ptp(d) == 0:
        raise SpectralError("all arrivals at the same distance")
    slope, intercept = np.polyfit(d, a, 1)
    if slope <= 0:
        raise SpectralError(f"non-causal front (slope {slope:.3g})")
    resid = float(np.sqrt(np.mean((a - (slope * d + intercept)) ** 2)))
    return LightConeFit(d, a, float(1.0 / slope), float(intercept), resid, front.threshold)


def front_from_arrays(distances, arrivals, threshold=float("nan")):
    """Wrap raw (distance, arrival) data for :func:`fit_velocity`."""
    d = np.asarray(distances, dtype=float)
    return LightFront(list(range(len(d))), d, np.asarray(arrivals, dtype=float),
                      threshold, "raw")


# -- synchronization ----------------------------------------------------------

@dataclass
class SyncReport:
    windows: list            # (start, stop) times of each period window
    sites: list              # inside-cone sites per window
    peak_times: list         # argmax time of Re F per inside-cone site
    spreads: np.ndarray      # max - min peak time per window, in grid steps

    @property
    def max_spread(self):
        return int(self.spreads.max()) if len(self.spreads) else 0


def peak_synchronization(field, period, threshold=None, min_sites=2, sites=None):
    """Per-period argmax times of Re F at sites already inside the light cone.

    Window k covers [k T, (k+1) T). A site takes part once its front arrival
    precedes the window start. ``sites`` restricts the candidates.
    """
    if field.kind != "otoc":
        raise SpectralError("synchronization is defined for OTOC fields")
    t = np.asarray(field.times, dtype=float)
    dt = _check_uniform(t, None)
    if not period > 2 * dt:
        raise SpectralError("period must span more than two grid steps")
    front = lightcone_front(field, threshold)
    allowed = set(field.sites if sites is None else sites)
    re = np.real(field.values)
    windows, members, peaks, spreads = [], [], [], []
    k = 0
    while (k + 1) * period <= t[-1] + 1e-9:
        a = int(round((k * period - t[0]) / dt))
        b = int(round(((k + 1) * period - t[0]) / dt))
        rows = [n for n, s in enumerate(field.sites)
                if s in allowed and np.isfinite(front.arrivals[n]) and front.arrivals[n] <= t[a]]
        if len(rows) >= min_sites:
            idx = np.array([a + int(np.argmax(re[n, a:b])) for n in rows])
            windows.append((float(t[a]), float(t[b])))
            members.append([field.sites[n] for n in rows])
            peaks.append(t[idx])
            spreads.append(int(idx.max() - idx.min()))
        k += 1
    return SyncReport(windows, members, peaks, np.array(spreads, dtype=int))
