"""
Multichannel wavelet block denoising.

Every channel is transformed with the same periodic orthonormal wavelet. At
each detail level the coefficients are rescaled to unit noise variance per
channel, grouped across channels into blocks of size Q (one block per time
location) and denoised with the canonical SBITE, with hyperparameters chosen
per level.

Usage:
    from sbite.wavelet import BlockWaveletDenoiser

    denoiser = BlockWaveletDenoiser(rule="sure", family="sym4", j0=4)
    clean, reports = denoiser.denoise(series)
"""

import logging
import math
import warnings
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pywt
from scipy import signal

from sbite.core.canonical import CANONICAL_RULES, denoise_canonical, select_canonical
from sbite.core.risk import SearchGrid
from sbite.errors import DomainError
from sbite.models.params import Hyperparameters
from sbite.models.report import LevelReport
from sbite.models.sequence import BlockSequence, MultichannelSeries, WaveletDecomposition

logger = logging.getLogger(__name__)

DEFAULT_FAMILY = "sym4"
DEFAULT_J0 = 4
MAD_CONSTANT = 0.6745
MIN_LEVEL_BLOCKS = 8


def _check_family(family: str):
    if family not in pywt.wavelist(kind="discrete"):
        raise DomainError(f"unknown wavelet family '{family}'")
    if not pywt.Wavelet(family).orthogonal:
        raise DomainError(f"wavelet family '{family}' is not orthogonal")


def dwt(series: MultichannelSeries, family: str = DEFAULT_FAMILY, j0: int = DEFAULT_J0) -> WaveletDecomposition:
    """
    Periodic orthonormal wavelet transform of every channel down to level j0.

    Args:
        series: Q x T series, T = 2^J
        family: PyWavelets orthogonal family name
        j0: Coarse level, 2 <= j0 < J; 2^j0 approximation coefficients remain

    Example:
        >>> decomp = dwt(MultichannelSeries(np.random.randn(3, 256)), j0=4)
        >>> decomp.levels
        [4, 5, 6, 7]
    """
    _check_family(family)
    if j0 < 2:
        raise DomainError(f"j0 must be >= 2, got {j0}")
    if j0 >= series.J:
        raise DomainError(f"j0 must be below log2(T) = {series.J}, got {j0}")

    with warnings.catch_warnings():
        # deep decompositions of short series are exact in periodization mode
        warnings.simplefilter("ignore", UserWarning)
        coeffs = pywt.wavedec(series.samples, family, mode="periodization", level=series.J - j0, axis=-1)
    decomp = WaveletDecomposition(
        approx=coeffs[0],
        details=list(coeffs[1:]),
        family=family,
        j0=j0,
        sample_rate=series.sample_rate,
    )
    return replace(decomp, scales=estimate_level_scales(decomp))


def idwt(decomp: WaveletDecomposition) -> MultichannelSeries:
    """Inverse of :func:`dwt`"""
    samples = pywt.waverec([decomp.approx] + list(decomp.details), decomp.family,
                           mode="periodization", axis=-1)
    return MultichannelSeries(samples, sample_rate=decomp.sample_rate)


def estimate_level_scales(decomp: WaveletDecomposition) -> np.ndarray:
    """Noise scale median(|d|) / 0.6745 per detail level and channel, shape (levels, Q)"""
    return np.array([np.median(np.abs(d), axis=1) / MAD_CONSTANT for d in decomp.details])


@dataclass
class BlockWaveletDenoiser:
    """
    Levelwise SBITE wavelet denoiser.

    Attributes:
        rule: Per-level selection rule: 'sure', 'sure_s1', 'sl2wic' or 'universal'
        family: Wavelet family
        j0: Coarse level
        nu: nu of the universal rule
        blockwise: Denoise blocks across channels; False treats every
            channel separately (Q = 1)
        grid: Search grids of the SURE rules
    """
    rule: str = "sure"
    family: str = DEFAULT_FAMILY
    j0: int = DEFAULT_J0
    nu: float = 2.0
    blockwise: bool = True
    grid: Optional[SearchGrid] = None

    def __post_init__(self):
        """Validate rule and family"""
        if self.rule not in CANONICAL_RULES:
            raise DomainError(f"unknown rule '{self.rule}' (use one of {CANONICAL_RULES})")
        _check_family(self.family)

    def _select(self, data: BlockSequence, level: int) -> Tuple[Hyperparameters, bool]:
        if self.rule != "universal" and data.N < MIN_LEVEL_BLOCKS:
            message = (f"level {level} has {data.N} blocks (< {MIN_LEVEL_BLOCKS}); "
                       f"using the universal threshold instead of '{self.rule}'")
            warnings.warn(message, RuntimeWarning, stacklevel=3)
            logger.warning(message)
            return select_canonical(data, "universal", nu=self.nu), True
        return select_canonical(data, self.rule, self.grid, nu=self.nu), False

    def _denoise_level(self, level: int, details: np.ndarray, scales: np.ndarray):
        Q, n_blocks = details.shape
        if np.any(scales == 0):
            logger.debug("level %d has a zero scale estimate; passing it through", level)
            report = LevelReport(level=level, n_blocks=n_blocks, rule=self.rule,
                                 hp=Hyperparameters(lam=0.0), scales=scales,
                                 active_count=n_blocks, noiseless=True)
            return details.copy(), [report]

        unit = details / scales[:, None]
        groups = [list(range(Q))] if self.blockwise else [[q] for q in range(Q)]
        out = np.empty_like(unit)
        reports = []
        for channels in groups:
            data = BlockSequence(unit[channels].T)
            hp, fallback = self._select(data, level)
            estimate = denoise_canonical(data, hp)
            out[channels] = estimate.blocks.T
            reports.append(LevelReport(
                level=level,
                n_blocks=n_blocks,
                rule="universal" if fallback else self.rule,
                hp=hp,
                scales=scales[channels],
                active_count=int(np.count_nonzero(estimate.norms())),
                channel=None if self.blockwise else channels[0],
                fallback=fallback,
            ))
        return out * scales[:, None], reports

    def denoise(self, series: MultichannelSeries) -> Tuple[MultichannelSeries, List[LevelReport]]:
        """
        Denoise a multichannel series.

        Returns:
            (denoised series, one LevelReport per level, or per level and
            channel when not blockwise)
        """
        decomp = dwt(series, self.family, self.j0)
        details = []
        reports: List[LevelReport] = []
        for idx, level in enumerate(decomp.levels):
            new, level_reports = self._denoise_level(level, decomp.details[idx], decomp.scales[idx])
            details.append(new)
            reports.extend(level_reports)
        return idwt(decomp.with_details(details)), reports


def denoise_multichannel(series: MultichannelSeries, rule: str = "sure", family: str = DEFAULT_FAMILY,
                         j0: int = DEFAULT_J0, nu: float = 2.0, blockwise: bool = True,
                         grid: Optional[SearchGrid] = None) -> Tuple[MultichannelSeries, List[LevelReport]]:
    """Convenience wrapper around :class:`BlockWaveletDenoiser`"""
    denoiser = BlockWaveletDenoiser(rule=rule, family=family, j0=j0, nu=nu, blockwise=blockwise, grid=grid)
    return denoiser.denoise(series)


def damped_sinusoid(length: int = 64, cycles: float = 4.0, decay: Optional[float] = None) -> np.ndarray:
    """Burst waveform exp(-t / decay) sin(2 pi cycles t / length), scaled to unit peak"""
    if length < 2:
        raise DomainError("waveform length must be >= 2")
    decay = length / 4.0 if decay is None else decay
    t = np.arange(length)
    wave = np.exp(-t / decay) * np.sin(2.0 * math.pi * cycles * t / length)
    return wave / np.max(np.abs(wave))


def inject_burst(series: MultichannelSeries, t0: int, amplitudes: Sequence[float],
                 waveform: Optional[np.ndarray] = None) -> MultichannelSeries:
    """
    Add amplitudes[q] * waveform at sample t0 of every channel q.

    Example:
        >>> noisy = inject_burst(series, 1500, (1.0, 3.0, 0.2))
    """
    wave = damped_sinusoid() if waveform is None else np.asarray(waveform, dtype=float).ravel()
    amplitudes = np.asarray(amplitudes, dtype=float).ravel()
    if amplitudes.size != series.Q:
        raise DomainError(f"need {series.Q} amplitudes, got {amplitudes.size}")
    if not 0 <= t0 <= series.T - wave.size:
        raise DomainError(f"a burst of length {wave.size} at t0={t0} does not fit in T={series.T}")
    samples = series.samples.copy()
    samples[:, t0:t0 + wave.size] += amplitudes[:, None] * wave
    return series.with_samples(samples)


def ar2_noise(Q: int, T: int, rng: np.random.Generator, r: float = 0.9,
              theta: float = math.pi / 4, scale: float = 1.0, burn_in: int = 256) -> np.ndarray:
    """
    Band-pass colored noise: independent AR(2) channels with poles r e^{+-i theta}.

    Scaled to stationary standard deviation ``scale``.
    """
    if not 0 <= r < 1:
        raise DomainError(f"pole radius must be in [0, 1), got {r}")
    phi1, phi2 = 2.0 * r * math.cos(theta), -r * r
    variance = (1.0 - phi2) / ((1.0 + phi2) * ((1.0 - phi2) ** 2 - phi1 ** 2))
    innovations = rng.standard_normal((Q, T + burn_in))
    colored = signal.lfilter([1.0], [1.0, -phi1, -phi2], innovations, axis=-1)[:, burn_in:]
    return scale * colored / math.sqrt(variance)


@dataclass
class DetectionSummary:
    """Peak-to-noise ratio inside the burst window and rms-to-noise ratio away from it, per channel"""
    local_snr: np.ndarray
    background_snr: np.ndarray

    def detected(self, local: float = 3.0, background: float = 0.5) -> bool:
        return bool(np.all(self.local_snr > local) and np.all(self.background_snr < background))


def detection_summary(output: MultichannelSeries, t0: int, length: int, sigma,
                      guard: Optional[int] = None) -> DetectionSummary:
    """
    Local and background signal-to-noise of a denoised series around a burst.

    The background excludes the window plus ``guard`` samples (default: the
    window length) on either side.
    """
    guard = length if guard is None else guard
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (output.Q,))
    samples = output.samples
    window = slice(t0, t0 + length)
    outside = np.ones(output.T, dtype=bool)
    outside[max(t0 - guard, 0):min(t0 + length + guard, output.T)] = False

    peak = np.max(np.abs(samples[:, window]), axis=1)
    background = np.sqrt(np.mean(samples[:, outside] ** 2, axis=1))
    return DetectionSummary(local_snr=peak / sigma, background_snr=background / sigma)
