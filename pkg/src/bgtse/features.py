"""Spatial/directional features and time-frequency masks."""

from itertools import combinations

import numpy as np

from .dsp import StftConfig, stft
from .geometry import SPEED_OF_SOUND, steering_vector

MAG_FLOOR = 1e-12

# 64-point FFT over the 16-sample / 8-hop framing of the time-domain encoder
TSNF_FEATURE_STFT = StftConfig(window_size=16, hop=8, window_kind="sqrt-hann", fft_size=64)


def default_pairs(n_mics):
    return list(combinations(range(n_mics), 2))


def _check_pairs(pairs, n_mics):
    for i, j in pairs:
        if not (0 <= i < n_mics and 0 <= j < n_mics) or i == j:
            raise ValueError(f"invalid mic pair {(i, j)} for {n_mics} channels")


def cos_ipd(spec, pairs=None):
    """cos of the interchannel phase difference, shape (P, F, K).

    Bins where either channel has magnitude below 1e-12 are set to 0.
    """
    bins = spec.bins
    if bins.shape[0] < 2:
        raise ValueError("cosIPD needs at least two channels")
    pairs = default_pairs(bins.shape[0]) if pairs is None else list(pairs)
    _check_pairs(pairs, bins.shape[0])
    mag = np.abs(bins)
    phase = np.angle(bins)
    out = np.empty((len(pairs),) + bins.shape[1:])
    for p, (i, j) in enumerate(pairs):
        v = np.cos(phase[i] - phase[j])
        v[(mag[i] < MAG_FLOOR) | (mag[j] < MAG_FLOOR)] = 0.0
        out[p] = v
    return out


def angle_feature(spec, sv, pairs=None):
    """Agreement of observed IPDs with the steering IPDs, averaged over pairs, (F, K)."""
    bins = spec.bins
    pairs = default_pairs(bins.shape[0]) if pairs is None else list(pairs)
    _check_pairs(pairs, bins.shape[0])
    d = sv.values
    if d.shape != (bins.shape[1], bins.shape[0]):
        raise ValueError(f"steering {d.shape} does not match spectrogram {bins.shape}")
    mag = np.abs(bins)
    phase = np.angle(bins)
    steer_phase = np.angle(d)
    acc = np.zeros(bins.shape[1:])
    for i, j in pairs:
        v = np.cos(phase[i] - phase[j] - (steer_phase[:, i] - steer_phase[:, j])[:, None])
        v[(mag[i] < MAG_FLOOR) | (mag[j] < MAG_FLOOR)] = 0.0
        acc += v
    return acc / len(pairs)


def _single(spec):
    bins = spec.bins if hasattr(spec, "bins") else np.asarray(spec)
    if bins.ndim == 3:
        if bins.shape[0] != 1:
            raise ValueError("expected a single-channel spectrogram")
        bins = bins[0]
    return bins


def irm(target_spec, interferer_spec, exponent=1.0):
    """Ideal ratio mask ``|S|^b / (|S|^b + |N|^b)``; bins where both vanish get 0."""
    s = np.abs(_single(target_spec)) ** exponent
    n = np.abs(_single(interferer_spec)) ** exponent
    if s.shape != n.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {n.shape}")
    den = s + n
    out = np.zeros_like(den)
    np.divide(s, den, out=out, where=den > 0)
    return out


def apply_mask(spec, mask):
    mask = np.asarray(mask, dtype=float)
    if spec.bins.shape[1:] != mask.shape:
        raise ValueError(f"mask {mask.shape} does not match spectrogram {spec.bins.shape}")
    return spec.replace(spec.bins * mask[None])


def coherence_mask(y_spec, z_spec, smoothing=0.7, floor=1e-12):
    """Mask from the recursively smoothed coherence between mixture and auxiliary.

    ``mask = clip(Re(S_yz) / sqrt(S_yy S_zz + floor), 0, 1)`` with first-order
    smoothing over frames.
    """
    y = _single(y_spec)
    z = _single(z_spec)
    if y.shape != z.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {z.shape}")
    if not 0 < smoothing < 1:
        raise ValueError("smoothing must lie in (0, 1)")
    s_yy = np.zeros(y.shape[0])
    s_zz = np.zeros(y.shape[0])
    s_yz = np.zeros(y.shape[0], dtype=complex)
    mask = np.empty(y.shape)
    for k in range(y.shape[1]):
        yk, zk = y[:, k], z[:, k]
        s_yy = smoothing * s_yy + (1 - smoothing) * np.abs(yk) ** 2
        s_zz = smoothing * s_zz + (1 - smoothing) * np.abs(zk) ** 2
        s_yz = smoothing * s_yz + (1 - smoothing) * yk * zk.conj()
        mask[:, k] = s_yz.real / np.sqrt(s_yy * s_zz + floor)
    return np.clip(mask, 0.0, 1.0)


def tsnf_features(y, geometry, doa, sample_rate=8000, c_sound=SPEED_OF_SOUND, cfg=TSNF_FEATURE_STFT):
    """Stacked cosIPD of all mic pairs plus the target angle feature, (P + 1, F, K)."""
    spec = stft(y, cfg, sample_rate)
    sv = steering_vector(geometry, doa, cfg, sample_rate, c_sound)
    return np.concatenate([cos_ipd(spec), angle_feature(spec, sv)[None]], axis=0)


def save_matrix(path, values):
    """Write a mask or feature tensor as a ``.npy`` file (magic, header dict, raw data)."""
    np.save(path, np.asarray(values), allow_pickle=False)


def load_matrix(path):
    return np.load(path, allow_pickle=False)
