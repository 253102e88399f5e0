"""H1 FRF estimation from force/acceleration time histories by block averaging."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.signal import windows

from .modal import FrfRecord

TABLE_DT = 1.25e-3  # s, acquisition time step of the fixed-free tests
TABLE_BLOCK = 16384
TABLE_BLOCKS = 20
WINDOWS = ("hanning", "rectangular")


@dataclass(frozen=True)
class TimeSeries:
    dt: float
    samples: np.ndarray
    channel: str = ""

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class SpectralConfig:
    block_size: int = TABLE_BLOCK
    n_blocks: int = TABLE_BLOCKS
    window: str = "hanning"
    overlap_fraction: float = 0.0

    def __post_init__(self):
        if self.block_size < 2:
            raise ValueError("block_size must be >= 2")
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.window not in WINDOWS:
            raise ValueError(f"window must be one of {WINDOWS}")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError("overlap_fraction must lie in [0, 1)")

    @property
    def hop(self) -> int:
        return max(1, self.block_size - int(round(self.overlap_fraction * self.block_size)))

    @property
    def required_samples(self) -> int:
        return self.block_size + (self.n_blocks - 1) * self.hop


@dataclass(frozen=True)
class AveragedSpectra:
    """One-sided averaged auto and cross spectral densities."""

    frequencies: np.ndarray
    g_zz: np.ndarray  # force auto spectrum
    g_uu: np.ndarray  # response auto spectrum
    g_zu: np.ndarray  # cross spectrum E[U Z*]


def window_samples(cfg: SpectralConfig) -> np.ndarray:
    if cfg.window == "hanning":
        return windows.hann(cfg.block_size, sym=False)
    return np.ones(cfg.block_size)


def _check_pair(force: TimeSeries, response: TimeSeries, cfg: SpectralConfig):
    if not np.isclose(force.dt, response.dt, rtol=1e-12, atol=0.0):
        raise ValueError(f"channels have different dt ({force.dt} vs {response.dt})")
    if len(force) != len(response):
        raise ValueError(f"channels have different lengths ({len(force)} vs {len(response)})")
    if len(force) < cfg.required_samples:
        raise ValueError(
            f"need at least {cfg.required_samples} samples for {cfg.n_blocks} blocks of "
            f"{cfg.block_size} (overlap {cfg.overlap_fraction}), got {len(force)}"
        )


def averaged_spectra(force: TimeSeries, response: TimeSeries, cfg: SpectralConfig) -> AveragedSpectra:
    """Average windowed block spectra over ``cfg.n_blocks`` blocks.

    Scaling is the one-sided density 2 / (fs * sum(w^2)) (DC and Nyquist not
    doubled), so auto spectra carry physical units whatever the window.
    """
    _check_pair(force, response, cfg)
    n, hop = cfg.block_size, cfg.hop
    w = window_samples(cfg)
    starts = hop * np.arange(cfg.n_blocks)
    idx = starts[:, None] + np.arange(n)[None, :]
    Z = np.fft.rfft(force.samples[idx] * w, axis=1)
    U = np.fft.rfft(response.samples[idx] * w, axis=1)
    fs = 1.0 / force.dt
    scale = np.full(Z.shape[1], 2.0 / (fs * np.sum(w**2)))
    scale[0] /= 2.0
    if n % 2 == 0:
        scale[-1] /= 2.0
    g_zz = scale * np.mean(np.abs(Z) ** 2, axis=0)
    g_uu = scale * np.mean(np.abs(U) ** 2, axis=0)
    g_zu = scale * np.mean(U * np.conj(Z), axis=0)
    return AveragedSpectra(np.fft.rfftfreq(n, force.dt), g_zz, g_uu, g_zu)


def _zero_power(g_zz) -> np.ndarray:
    return g_zz <= np.finfo(float).tiny * max(1.0, float(np.max(g_zz, initial=0.0)))


def h1_estimate(force: TimeSeries, response: TimeSeries, cfg: SpectralConfig | None = None,
                meta: dict | None = None) -> FrfRecord:
    """H1 FRF estimate G_zu / G_zz on the grid 0 .. Nyquist.

    Bins where the force has no power are returned as NaN and reported with a
    RuntimeWarning instead of being divided.
    """
    cfg = cfg or SpectralConfig()
    sp = averaged_spectra(force, response, cfg)
    zero = _zero_power(sp.g_zz)
    h = np.full(sp.g_zz.shape, np.nan + 0j)
    h[~zero] = sp.g_zu[~zero] / sp.g_zz[~zero]
    if np.any(zero):
        bins = np.flatnonzero(zero)
        warnings.warn(f"force spectrum has zero power at {bins.size} bin(s) "
                      f"(first at {sp.frequencies[bins[0]]:.6g} Hz); H set to NaN there",
                      RuntimeWarning)
    return FrfRecord(sp.frequencies, h, meta or {})


def coherence(force: TimeSeries, response: TimeSeries, cfg: SpectralConfig | None = None) -> np.ndarray:
    """Ordinary coherence |G_zu|^2 / (G_zz G_uu), clamped to [0, 1]."""
    cfg = cfg or SpectralConfig()
    sp = averaged_spectra(force, response, cfg)
    den = sp.g_zz * sp.g_uu
    zero = _zero_power(sp.g_zz) | _zero_power(sp.g_uu)
    out = np.full(den.shape, np.nan)
    out[~zero] = np.abs(sp.g_zu[~zero]) ** 2 / den[~zero]
    return np.clip(out, 0.0, 1.0)
