"""Windowed STFT analysis/synthesis.

Shape convention: multichannel waveforms are ``(C, T)`` float arrays and
spectrograms are ``(C, F, K)`` complex arrays, frequency before time so the
per-bin beamformer solves can broadcast over the leading axes.
"""

from dataclasses import dataclass

import numpy as np

WINDOW_KINDS = ("sqrt-hann", "hann", "rect")


class ConfigurationError(ValueError):
    """Raised for invalid or inconsistent processing parameters."""


def _window_pair(kind, size):
    # Half-sample offset keeps every tap nonzero, so samples at the very edge of
    # an uncentered signal are still recoverable.
    n = np.arange(size) + 0.5
    if kind == "sqrt-hann":
        w = np.sin(np.pi * n / size)
        return w, w
    if kind == "hann":
        return np.sin(np.pi * n / size) ** 2, np.ones(size)
    if kind == "rect":
        return np.ones(size), np.ones(size)
    raise ConfigurationError(f"unknown window kind {kind!r}; expected one of {WINDOW_KINDS}")


def _is_cola(product, hop, rtol=1e-9):
    size = len(product)
    acc = np.zeros(hop)
    for start in range(0, size, hop):
        seg = product[start:start + hop]
        acc[:len(seg)] += seg
    return np.ptp(acc) <= rtol * np.max(np.abs(acc))


@dataclass(frozen=True)
class StftConfig:
    window_size: int = 1024
    hop: int = 256
    window_kind: str = "sqrt-hann"
    fft_size: int | None = None
    center_pad: bool = False

    def __post_init__(self):
        if self.fft_size is None:
            object.__setattr__(self, "fft_size", self.window_size)
        if self.window_size < 1:
            raise ConfigurationError("window_size must be positive")
        if not 0 < self.hop <= self.window_size:
            raise ConfigurationError(
                f"hop must satisfy 0 < hop <= window_size, got hop={self.hop}, "
                f"window_size={self.window_size}")
        if self.fft_size < self.window_size:
            raise ConfigurationError("fft_size must be >= window_size")
        analysis, synthesis = _window_pair(self.window_kind, self.window_size)
        if not _is_cola(analysis * synthesis, self.hop):
            raise ConfigurationError(
                f"{self.window_kind} window of {self.window_size} samples is not "
                f"COLA at hop {self.hop}")

    @classmethod
    def with_overlap(cls, window_size, overlap=0.75, **kwargs):
        return cls(window_size=window_size, hop=int(round(window_size * (1 - overlap))), **kwargs)

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    @property
    def pad(self):
        return self.window_size // 2 if self.center_pad else 0

    def windows(self):
        return _window_pair(self.window_kind, self.window_size)

    def bin_frequencies(self, sample_rate):
        return np.arange(self.n_bins) * sample_rate / self.fft_size

    def to_dict(self):
        return {
            "window_size": self.window_size,
            "hop": self.hop,
            "window_kind": self.window_kind,
            "fft_size": self.fft_size,
            "center_pad": self.center_pad,
        }


# Beamformer configs zero-pad half a window at both ends so the first and last
# samples see full overlap; reflected padding breaks the plane-wave model.
FRONTEND_STFT = StftConfig.with_overlap(1024, 0.75, center_pad=True)
BACKEND_STFT = StftConfig.with_overlap(4096, 0.75, center_pad=True)


@dataclass
class Spectrogram:
    """Complex STFT of a (possibly single-channel) signal.

    ``bins`` has shape ``(C, F, K)``; ``length`` is the sample count of the
    analysed signal so synthesis can restore it exactly.
    """

    bins: np.ndarray
    config: StftConfig
    sample_rate: float
    length: int

    @property
    def n_channels(self):
        return self.bins.shape[0]

    @property
    def n_frames(self):
        return self.bins.shape[-1]

    def frequencies(self):
        return self.config.bin_frequencies(self.sample_rate)

    def replace(self, bins):
        return Spectrogram(bins, self.config, self.sample_rate, self.length)

    def channel(self, c):
        return self.replace(self.bins[c:c + 1])


def as_multichannel(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise ValueError(f"expected a (C, T) waveform, got shape {x.shape}")
    return x


def frame_count(n_samples, cfg):
    """Number of frames covering ``n_samples``, tail zero-padded to a whole frame."""
    if n_samples < 0:
        raise ValueError("n_samples must be non-negative")
    if n_samples == 0:
        return 0
    padded = n_samples + 2 * cfg.pad
    return 1 + -(-max(padded - cfg.window_size, 0) // cfg.hop)


def stft(x, cfg, sample_rate=8000):
    x = as_multichannel(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains non-finite samples")
    n_chan, n_samples = x.shape
    if n_samples < 1:
        raise ValueError("signal must have at least one sample")
    n_frames = frame_count(n_samples, cfg)
    total = (n_frames - 1) * cfg.hop + cfg.window_size
    x = np.pad(x, ((0, 0), (cfg.pad, total - n_samples - cfg.pad)))
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.window_size, axis=-1)[:, ::cfg.hop]
    analysis, _ = cfg.windows()
    spec = np.fft.rfft(frames * analysis, n=cfg.fft_size, axis=-1)
    return Spectrogram(np.ascontiguousarray(spec.transpose(0, 2, 1)), cfg, sample_rate, n_samples)


def istft(spec, target_length=None):
    """Overlap-add synthesis, normalised by the accumulated window envelope."""
    cfg = spec.config
    if target_length is None:
        target_length = spec.length
    bins = spec.bins
    n_chan, _, n_frames = bins.shape
    analysis, synthesis = cfg.windows()
    frames = np.fft.irfft(bins.transpose(0, 2, 1), n=cfg.fft_size, axis=-1)[..., :cfg.window_size]
    total = max((n_frames - 1) * cfg.hop + cfg.window_size, 0) if n_frames else 0
    out = np.zeros((n_chan, total))
    envelope = np.zeros(total)
    product = analysis * synthesis
    for k in range(n_frames):
        sl = slice(k * cfg.hop, k * cfg.hop + cfg.window_size)
        out[:, sl] += frames[:, k] * synthesis
        envelope[sl] += product
    nonzero = envelope > 1e-12
    out[:, nonzero] /= envelope[nonzero]
    out = out[:, cfg.pad:]
    if out.shape[1] >= target_length:
        return out[:, :target_length]
    return np.pad(out, ((0, 0), (0, target_length - out.shape[1])))
