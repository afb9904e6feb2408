"""Photocurrent spectra: Welch PSD, shot-noise normalisation, sideband fits.

PSDs are one-sided. A white current with per-sample variance ``s2`` at rate
``fs`` has the flat level ``2 s2 / fs``; for the photocurrent
``sqrt(gamma/2) xi`` this is ``gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal
from scipy.optimize import curve_fit


class SpectrumError(ValueError):
    pass


class FitFailed(SpectrumError):
    pass


@dataclass(frozen=True)
class SpectrumEstimate:
    freq_hz: np.ndarray
    psd: np.ndarray
    floor: float = float("nan")
    n_segments: int = 0
    estimator_sigma: float = float("nan")
    segment_len: int = 0
    sample_rate: float = float("nan")

    @property
    def normalized(self) -> np.ndarray:
        if not self.floor > 0:
            raise SpectrumError("spectrum has not been normalised")
        return self.psd / self.floor

    @property
    def df(self) -> float:
        return float(self.freq_hz[1] - self.freq_hz[0])

    def band(self, lo: float, hi: float) -> np.ndarray:
        return (self.freq_hz >= lo) & (self.freq_hz <= hi)

    def to_csv(self, path) -> None:
        norm = self.normalized if self.floor > 0 else np.full_like(self.psd, np.nan)
        np.savetxt(path, np.column_stack([self.freq_hz, self.psd, norm]), delimiter=",",
                   header="freq_hz,psd,normalized", comments="")


@dataclass(frozen=True)
class SidebandFit:
    center_hz: float
    fwhm_hz: float
    amplitude: float  # signed peak height of the normalised Lorentzian
    area: float  # integral of (normalised PSD - 1) over the window, Hz
    offset: float
    fit_rmse: float
    center_err_hz: float = float("nan")
    fwhm_err_hz: float = float("nan")

    @property
    def area_fit(self) -> float:
        """Area under the fitted Lorentzian (infinite limits)."""
        return 0.5 * math.pi * self.amplitude * self.fwhm_hz


def welch_psd(series, sample_rate: float, segment_len: int = 4096, overlap: float = 0.5
              ) -> SpectrumEstimate:
    """Hann-windowed averaged periodogram, one-sided density."""
    x = np.asarray(series, dtype=float)
    if segment_len < 8 or segment_len & (segment_len - 1):
        raise SpectrumError(f"segment_len must be a power of two, got {segment_len}")
    if not 0 <= overlap <= 0.9:
        raise SpectrumError(f"overlap must lie in [0, 0.9], got {overlap}")
    if x.size < 4 * segment_len:
        raise SpectrumError(f"series of {x.size} samples is shorter than 4 segments of {segment_len}")
    nover = int(round(overlap * segment_len))
    f, pxx = signal.welch(x, fs=sample_rate, window="hann", nperseg=segment_len, noverlap=nover,
                          detrend="constant", scaling="density", return_onesided=True)
    n_seg = 1 + (x.size - segment_len) // (segment_len - nover)
    return SpectrumEstimate(f, pxx, n_segments=n_seg, segment_len=segment_len,
                            sample_rate=float(sample_rate))


def average(estimates: list[SpectrumEstimate]) -> SpectrumEstimate:
    """Mean PSD of estimates taken on the same grid (independent records)."""
    if not estimates:
        raise SpectrumError("nothing to average")
    f = estimates[0].freq_hz
    for e in estimates[1:]:
        if e.freq_hz.shape != f.shape or not np.allclose(e.freq_hz, f):
            raise SpectrumError("spectra are on different grids")
    psd = np.mean([e.psd for e in estimates], axis=0)
    return replace(estimates[0], psd=psd, n_segments=sum(e.n_segments for e in estimates),
                   floor=float("nan"), estimator_sigma=float("nan"))


def normalize_to_shotnoise(s: SpectrumEstimate, exclude_band: tuple[float, float],
                           edge_fraction: float = 0.02) -> SpectrumEstimate:
    """Set ``floor`` to the median PSD outside ``exclude_band``.

    The first and last ``edge_fraction`` of the grid are also left out (DC
    and Nyquist bins carry half the degrees of freedom). ``estimator_sigma``
    is the standard deviation of the normalised PSD over the same bins.
    """
    lo, hi = exclude_band
    n = s.freq_hz.size
    keep = ~s.band(lo, hi)
    e = max(1, int(edge_fraction * n))
    keep[:e] = False
    keep[-e:] = False
    if keep.sum() < 0.25 * n:
        raise SpectrumError("exclusion band leaves fewer than 25% of bins for the floor")
    floor = float(np.median(s.psd[keep]))
    if not floor > 0:
        raise SpectrumError("non-positive shot-noise floor")
    sigma = float(np.std(s.psd[keep] / floor, ddof=1))
    return replace(s, floor=floor, estimator_sigma=sigma)


def lorentzian(f, offset, amplitude, center, fwhm):
    h = 0.5 * fwhm
    return offset + amplitude * h * h / ((f - center) ** 2 + h * h)


def window_kernel(segment_len: int, sample_rate: float, span_bins: float = 6.0, n: int = 97
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Spectral kernel ``|W(f)|^2`` of the Hann window, normalised to unit sum.

    The expected Welch estimate of a spectrum ``S`` is ``S`` convolved with
    this kernel; for a line a few bins wide the convolution visibly broadens
    the fitted width.
    """
    L = segment_len
    df = sample_rate / L
    u = np.linspace(-span_bins, span_bins, n) * df

    def dirichlet(f):
        x = np.pi * f / sample_rate
        sx = np.sin(x)
        safe = np.abs(sx) > 1e-300
        ratio = np.where(safe, np.sin(L * x) / np.where(safe, sx, 1.0), L)
        return np.exp(-1j * x * (L - 1)) * ratio

    # periodic Hann = 1/2 - (e^{+} + e^{-}) / 4, i.e. three shifted Dirichlet kernels
    W = 0.5 * dirichlet(u) - 0.25 * dirichlet(u - df) - 0.25 * dirichlet(u + df)
    weights = np.abs(W) ** 2
    return u, weights / weights.sum()


def fit_lorentzian(s: SpectrumEstimate, window_hz: tuple[float, float], maxfev: int = 5000,
                   deconvolve: bool = True) -> SidebandFit:
    """Least-squares ``offset + signed Lorentzian`` on the normalised PSD.

    With ``deconvolve`` the model is convolved with the Hann spectral kernel
    before comparison, so the reported width is that of the underlying line.
    """
    sel = s.band(*window_hz)
    if sel.sum() < 20:
        raise SpectrumError(f"only {sel.sum()} bins in the fit window; need >= 20")
    f = s.freq_hz[sel]
    y = s.normalized[sel]
    dev = y - np.median(y)
    k = int(np.argmax(np.abs(dev)))
    amp0 = float(dev[k])
    half = np.abs(dev) >= 0.5 * abs(amp0)
    fwhm0 = max(float(half.sum()) * s.df, 2 * s.df)
    p0 = (float(np.median(y)), amp0, float(f[k]), fwhm0)
    span = f[-1] - f[0]
    bounds = ([-np.inf, -np.inf, f[0], 0.1 * s.df], [np.inf, np.inf, f[-1], 2 * span])
    model = lorentzian
    if deconvolve and s.segment_len:
        u, kw = window_kernel(s.segment_len, s.sample_rate)

        def model(x, offset, amplitude, center, fwhm):
            return offset + kw @ lorentzian(x[None, :] - u[:, None], 0.0, amplitude, center, fwhm)

    try:
        popt, pcov = curve_fit(model, f, y, p0=p0, bounds=bounds, maxfev=maxfev)
    except (RuntimeError, ValueError) as exc:
        raise FitFailed(f"Lorentzian fit did not converge: {exc}; start {p0}") from exc
    resid = y - model(f, *popt)
    err = np.sqrt(np.clip(np.diag(pcov), 0, np.inf))
    area = float(np.sum(y - 1.0) * s.df)
    return SidebandFit(
        center_hz=float(popt[2]),
        fwhm_hz=float(popt[3]),
        amplitude=float(popt[1]),
        area=area,
        offset=float(popt[0]),
        fit_rmse=float(np.sqrt(np.mean(resid**2))),
        center_err_hz=float(err[2]),
        fwhm_err_hz=float(err[3]),
    )


def excess_area(s: SpectrumEstimate, window_hz: tuple[float, float]) -> float:
    """Integral of ``normalised - 1`` over the window (Hz)."""
    sel = s.band(*window_hz)
    return float(np.sum(s.normalized[sel] - 1.0) * s.df)


@dataclass(frozen=True)
class SquashResult:
    min_in: float
    min_out: float
    sigma_in: float
    sigma_out: float

    @property
    def squashed(self) -> bool:
        """In-loop dip below ``1 - 3 sigma`` with the out-of-loop channel above it."""
        return self.min_in < 1 - 3 * self.sigma_in and self.min_out >= 1 - 3 * self.sigma_out


def squash_metric(s_in: SpectrumEstimate, s_out: SpectrumEstimate, window_hz: tuple[float, float]
                  ) -> SquashResult:
    """Minimum normalised PSD inside the sideband window for both channels.

    Raises
    ------
    SpectrumError
        The window holds no frequency bin of either estimate.
    """
    sel_in = s_in.band(*window_hz)
    sel_out = s_out.band(*window_hz)
    if not sel_in.any() or not sel_out.any():
        raise SpectrumError(f"window {window_hz} Hz contains no frequency bin")
    return SquashResult(
        min_in=float(np.min(s_in.normalized[sel_in])),
        min_out=float(np.min(s_out.normalized[sel_out])),
        sigma_in=s_in.estimator_sigma,
        sigma_out=s_out.estimator_sigma,
    )


def analytic_sideband(f_hz, nu_hz: float, fwhm_hz: float, area_hz: float) -> np.ndarray:
    """Normalised Lorentzian excess with the given area, for synthetic checks."""
    h = 0.5 * fwhm_hz
    return area_hz * h / math.pi / ((np.asarray(f_hz) - nu_hz) ** 2 + h * h)
