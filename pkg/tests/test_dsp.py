import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bgtse.dsp import (BACKEND_STFT, FRONTEND_STFT, ConfigurationError, StftConfig, frame_count,
                       istft, stft)


def naive_frame(x, cfg, k):
    """Spectrum of frame ``k`` by direct DFT summation (independent of np.fft)."""
    padded = np.concatenate([np.zeros(cfg.pad), x, np.zeros(cfg.window_size + cfg.pad)])
    seg = padded[k * cfg.hop:k * cfg.hop + cfg.window_size]
    n = np.arange(cfg.window_size)
    w = np.sin(np.pi * (n + 0.5) / cfg.window_size)
    f = np.arange(cfg.n_bins)
    basis = np.exp(-2j * np.pi * np.outer(f, n) / cfg.fft_size)
    return basis @ (seg * w)


class TestStftConfig:
    def test_defaults(self):
        cfg = StftConfig()
        assert (cfg.window_size, cfg.hop, cfg.fft_size, cfg.n_bins) == (1024, 256, 1024, 513)
        assert not cfg.center_pad

    def test_overlap_constructor(self):
        assert FRONTEND_STFT.hop == 256 and FRONTEND_STFT.window_size == 1024
        assert BACKEND_STFT.hop == 1024 and BACKEND_STFT.window_size == 4096

    @pytest.mark.parametrize("kwargs", [
        dict(window_size=1024, hop=0),
        dict(window_size=1024, hop=2048),
        dict(window_size=1024, hop=256, fft_size=512),
        dict(window_size=1024, hop=1000),
        dict(window_size=64, hop=16, window_kind="blackman"),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            StftConfig(**kwargs)

    def test_hann_cola_at_half_overlap(self):
        StftConfig(window_size=256, hop=128, window_kind="hann")

    def test_bin_frequencies(self):
        f = StftConfig(window_size=16, hop=8, fft_size=64).bin_frequencies(8000)
        assert len(f) == 33
        assert f[1] == pytest.approx(125.0)
        assert f[-1] == pytest.approx(4000.0)


class TestFrameCount:
    @pytest.mark.parametrize("n", [0, 1, 255, 1024, 1025, 5000])
    @pytest.mark.parametrize("center", [False, True])
    def test_matches_enumeration(self, n, center):
        cfg = StftConfig(1024, 256, center_pad=center)
        if n == 0:
            assert frame_count(0, cfg) == 0
            return
        # smallest K whose frames cover every (padded) sample
        padded = n + 2 * cfg.pad
        k = 1
        while (k - 1) * cfg.hop + cfg.window_size < padded:
            k += 1
        assert frame_count(n, cfg) == k


class TestStft:
    def test_shape(self):
        x = np.random.default_rng(0).standard_normal((3, 4000))
        spec = stft(x, FRONTEND_STFT)
        assert spec.bins.shape == (3, 513, frame_count(4000, FRONTEND_STFT))
        assert spec.length == 4000

    @pytest.mark.parametrize("center", [False, True])
    def test_matches_direct_dft(self, center):
        cfg = StftConfig(64, 16, center_pad=center)
        x = np.random.default_rng(1).standard_normal(300)
        spec = stft(x, cfg)
        for k in (0, 3, spec.n_frames - 1):
            np.testing.assert_allclose(spec.bins[0, :, k], naive_frame(x, cfg, k), atol=1e-10)

    def test_linear(self):
        rng = np.random.default_rng(2)
        a, b = rng.standard_normal((2, 3000))
        cfg = StftConfig(256, 64)
        np.testing.assert_allclose(stft(2 * a - b, cfg).bins,
                                   2 * stft(a, cfg).bins - stft(b, cfg).bins, atol=1e-10)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            stft(np.zeros((1, 0)), FRONTEND_STFT)
        with pytest.raises(ValueError):
            stft(np.array([0.0, np.nan, 1.0]), FRONTEND_STFT)

    def test_sinusoid_peak_bin(self):
        fs, cfg = 8000, StftConfig(256, 64)
        t = np.arange(8000) / fs
        spec = stft(np.cos(2 * np.pi * 1000 * t), cfg, fs)
        assert np.argmax(np.abs(spec.bins[0, :, 10])) == 1000 * cfg.fft_size // fs


class TestRoundTrip:
    @pytest.mark.parametrize("cfg", [FRONTEND_STFT, BACKEND_STFT, StftConfig(1024, 256),
                                     StftConfig(256, 128, window_kind="hann"),
                                     StftConfig(16, 8, fft_size=64)])
    def test_perfect_reconstruction(self, cfg):
        x = np.random.default_rng(3).standard_normal((2, 12345))
        y = istft(stft(x, cfg))
        assert y.shape == x.shape
        assert np.linalg.norm(y - x) / np.linalg.norm(x) < 1e-10

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 3000), center=st.booleans(), seed=st.integers(0, 2**16))
    def test_any_length(self, n, center, seed):
        cfg = StftConfig(128, 32, center_pad=center)
        x = np.random.default_rng(seed).standard_normal(n)
        y = istft(stft(x, cfg))[0]
        np.testing.assert_allclose(y, x, atol=1e-9)

    def test_target_length(self):
        x = np.random.default_rng(4).standard_normal(1000)
        spec = stft(x, StftConfig(256, 64))
        assert istft(spec, 900).shape == (1, 900)
        out = istft(spec, 1200)
        assert out.shape == (1, 1200)
        np.testing.assert_allclose(out[0, 1000:], 0.0, atol=1e-12)
