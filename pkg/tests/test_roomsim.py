import numpy as np
import pytest

from bgtse.dsp import ConfigurationError
from bgtse.roomsim import (RoomSpec, SceneSpec, SimulationRanges, image_source_rir, mix_at_sir,
                           sample_scene, schroeder_t60, simulate_scene, synthetic_speech)

FS = 8000


class TestRoomSpec:
    @pytest.mark.parametrize("t60", [-0.1, 2.5])
    def test_t60_range(self, t60):
        with pytest.raises(ValueError):
            RoomSpec((6.0, 5.0, 3.0), t60)

    def test_anechoic_absorbs_everything(self):
        assert RoomSpec((6.0, 5.0, 3.0), 0.0).absorption() == 1.0

    def test_absorption_grows_as_t60_shrinks(self):
        a = [RoomSpec((6.0, 5.0, 3.0), t).absorption() for t in (0.2, 0.5, 1.0)]
        assert a[0] > a[1] > a[2] > 0

    def test_volume_surface(self):
        room = RoomSpec((6.0, 5.0, 3.0), 0.3)
        assert room.volume == pytest.approx(90.0)
        assert room.surface == pytest.approx(2 * (30 + 18 + 15))


class TestRir:
    def test_anechoic_is_free_field_green_function(self):
        # distance 1.715 m -> 40 samples at 8 kHz, 343 m/s
        room = RoomSpec((6.0, 5.0, 3.0), 0.0)
        src, mic = np.array([1.0, 2.0, 1.5]), np.array([2.715, 2.0, 1.5])
        h = image_source_rir(room, src, mic, fs=FS)
        assert np.argmax(np.abs(h)) == 40
        assert h[40] == pytest.approx(1 / (4 * np.pi * 1.715), rel=1e-12)
        np.testing.assert_allclose(np.delete(h, 40), 0.0, atol=1e-15)

    def test_fractional_direct_path(self):
        room = RoomSpec((6.0, 5.0, 3.0), 0.0)
        src, mic = np.array([1.0, 2.0, 1.5]), np.array([2.0, 2.3, 1.2])
        dist = np.linalg.norm(src - mic)
        h = image_source_rir(room, src, mic, fs=FS)
        assert abs(np.argmax(h) - dist / 343 * FS) <= 0.5

    def test_first_order_reflection(self):
        # only the floor image at order 1 can arrive before 2*height; check its delay
        room = RoomSpec((20.0, 20.0, 3.0), 0.5)
        src, mic = np.array([10.0, 10.0, 1.0]), np.array([11.0, 10.0, 1.0])
        h = image_source_rir(room, src, mic, max_order=1, fs=FS, highpass_hz=0)
        floor = np.hypot(1.0, 2.0) / 343 * FS
        window = h[int(floor) - 2:int(floor) + 3]
        assert np.max(np.abs(window)) > 0.2 * np.max(np.abs(h))

    @pytest.mark.parametrize("t60", [0.3, 0.5, 0.8])
    def test_schroeder_t60(self, t60):
        room = RoomSpec((7.0, 6.0, 3.2), t60)
        h = image_source_rir(room, np.array([2.0, 3.0, 1.6]), np.array([3.2, 3.5, 1.5]), fs=FS)
        assert schroeder_t60(h, FS) == pytest.approx(t60, rel=0.2)

    def test_length_grows_with_t60(self):
        src, mic = np.array([2.0, 3.0, 1.6]), np.array([3.2, 3.5, 1.5])
        lengths = [len(image_source_rir(RoomSpec((7.0, 6.0, 3.2), t), src, mic, fs=FS))
                   for t in (0.2, 0.6)]
        assert lengths[0] < lengths[1]

    def test_outside_room(self):
        room = RoomSpec((6.0, 5.0, 3.0), 0.3)
        with pytest.raises(ValueError):
            image_source_rir(room, np.array([7.0, 1.0, 1.0]), np.array([1.0, 1.0, 1.0]))


class TestSchroeder:
    def test_exponential_decay(self):
        # energy decays 60 dB in 0.5 s exactly
        t = np.arange(int(1.0 * FS)) / FS
        h = np.random.default_rng(0).standard_normal(len(t)) * 10 ** (-3 * t / 0.5)
        assert schroeder_t60(h, FS) == pytest.approx(0.5, rel=0.05)


class TestSpeech:
    def test_deterministic_and_normalised(self):
        a = synthetic_speech(8000, FS, seed=3)
        np.testing.assert_array_equal(a, synthetic_speech(8000, FS, seed=3))
        assert np.max(np.abs(a)) == pytest.approx(0.5)
        assert not np.allclose(a, synthetic_speech(8000, FS, seed=4))

    def test_speech_band(self):
        x = synthetic_speech(16000, FS, seed=1)
        p = np.abs(np.fft.rfft(x)) ** 2
        f = np.fft.rfftfreq(len(x), 1 / FS)
        # little energy below 100 Hz, most in the formant region, some above 1 kHz
        assert p[f < 100].sum() < 0.02 * p.sum()
        assert p[(f >= 300) & (f < 3500)].sum() > 0.6 * p.sum()
        assert 0.02 * p.sum() < p[f >= 1000].sum() < 0.5 * p.sum()


class TestMix:
    def test_sir_and_additivity(self):
        rng = np.random.default_rng(1)
        xs, xn = rng.standard_normal((2, 3, 1000))
        sig = mix_at_sir(xs, xn, 3.0, ref=1)
        np.testing.assert_allclose(sig.mixture, sig.target_image + sig.interferer_image, atol=1e-12)
        sir = 10 * np.log10(np.sum(sig.target_image[1] ** 2) / np.sum(sig.interferer_image[1] ** 2))
        assert sir == pytest.approx(3.0, abs=1e-9)

    def test_silent_source(self):
        with pytest.raises(ValueError):
            mix_at_sir(np.ones((2, 10)), np.zeros((2, 10)), 0.0)


class TestSceneSampling:
    def test_deterministic(self):
        assert sample_scene(5).to_dict() == sample_scene(5).to_dict()
        assert sample_scene(5).to_dict() != sample_scene(6).to_dict()

    @pytest.mark.parametrize("seed", range(10))
    def test_ranges(self, seed):
        spec = sample_scene(seed)
        length, width, height = spec.room.dimensions
        assert 5 <= length <= 10 and 5 <= width <= 10 and 3 <= height <= 4
        assert 0.1 <= spec.room.t60 <= 1.0
        assert 0.075 <= spec.array_radius <= 0.125
        assert 0 <= spec.sir_db <= 5
        for p in spec.source_positions:
            assert 0.66 <= np.linalg.norm(np.subtract(p, spec.array_center)) <= 2.0

    def test_angular_spacing_range(self):
        ranges = SimulationRanges(angular_spacing=(20.0, 30.0))
        for seed in range(5):
            assert 20.0 - 1e-6 <= sample_scene(seed, ranges).angular_spacing <= 30.0 + 1e-6

    def test_dict_round_trip(self):
        spec = sample_scene(2)
        again = SceneSpec.from_dict(spec.to_dict())
        assert again.to_dict() == spec.to_dict()

    def test_invalid_distance(self):
        d = sample_scene(2).to_dict()
        d["source_positions"][0] = list(np.add(d["array_center"], [3.0, 0.0, 0.0]))
        with pytest.raises(ValueError):
            SceneSpec.from_dict(d)

    def test_bad_ranges(self):
        with pytest.raises(ConfigurationError):
            sample_scene(0, SimulationRanges(source_distance=(0.1, 1.0)))
        with pytest.raises(ConfigurationError):
            SimulationRanges.from_dict({"t60": [0.1, 0.2], "colour": "red"})


class TestSimulate:
    def test_additive_and_sir(self, reverberant_scene):
        spec, sig = reverberant_scene
        np.testing.assert_allclose(sig.mixture, sig.target_image + sig.interferer_image, atol=1e-9)
        sir = 10 * np.log10(np.sum(sig.target_image[0] ** 2) / np.sum(sig.interferer_image[0] ** 2))
        assert sir == pytest.approx(spec.sir_db, abs=1e-9)
        assert sig.mixture.shape[0] == 4
        assert sig.target_doa == spec.target_doa

    def test_resimulation_is_identical(self, reverberant_scene):
        spec, sig = reverberant_scene
        again = simulate_scene(SceneSpec.from_dict(spec.to_dict()))
        np.testing.assert_allclose(again.mixture, sig.mixture, atol=1e-12)


class TestSpecExamples:
    def test_max_order_zero_is_direct_only(self):
        room = RoomSpec((6.0, 5.0, 3.0), 0.7)
        src, mic = np.array([1.0, 2.0, 1.5]), np.array([2.715, 2.0, 1.5])
        h = image_source_rir(room, src, mic, max_order=0, fs=FS)
        assert h[40] == pytest.approx(1 / (4 * np.pi * 1.715), rel=1e-12)
        np.testing.assert_allclose(np.delete(h, 40), 0.0, atol=1e-15)

    def test_mix_scaling_examples(self):
        rng = np.random.default_rng(2)
        xs = rng.standard_normal((2, 500))
        xn = xs[::-1].copy() * np.sqrt(np.sum(xs[0] ** 2) / np.sum(xs[1] ** 2))
        np.testing.assert_allclose(mix_at_sir(xs, xn, 0.0).interferer_image, xn)
        np.testing.assert_allclose(mix_at_sir(xs, xn, 10 * np.log10(2)).interferer_image, xn / np.sqrt(2))

    def test_sir_and_radius_distribution(self):
        from scipy.stats import kstest
        specs = [sample_scene(10_000 + i) for i in range(1000)]
        radii = np.array([s.array_radius for s in specs])
        assert radii.min() >= 0.075 and radii.max() <= 0.125
        sirs = np.array([s.sir_db for s in specs])
        assert kstest(sirs, "uniform", args=(0.0, 5.0)).pvalue > 0.01

    @pytest.mark.parametrize("t60", [0.3, 0.8])
    def test_tail_energy(self, t60):
        room = RoomSpec((8.0, 6.0, 3.5), t60)
        h = image_source_rir(room, np.array([2.0, 3.0, 1.6]), np.array([3.0, 2.5, 1.4]), fs=FS)
        assert np.sum(h[int(t60 * FS):] ** 2) <= 0.01 * np.sum(h ** 2)

    @pytest.mark.parametrize("seed", range(20))
    def test_stored_doa_matches_geometry(self, seed):
        from bgtse.geometry import Doa, angular_spacing
        spec = sample_scene(seed)
        for pos, doa in zip(spec.source_positions, spec.source_doas):
            assert angular_spacing(Doa.from_vector(np.subtract(pos, spec.array_center)), doa) < 0.1

    def test_anechoic_impulse_tdoa(self):
        # 2 m source, impulse dry signals: image peaks follow the plane-wave TDOAs
        from bgtse.geometry import plane_wave_delays
        ranges = SimulationRanges(t60=(0.0, 0.0), source_distance=(2.0, 2.0))
        spec = sample_scene(4, ranges)
        impulse = np.zeros(400)
        impulse[0] = 1.0
        sig = simulate_scene(spec, impulse, impulse)
        peaks = np.argmax(np.abs(sig.target_image), axis=1)
        tau = plane_wave_delays(spec.geometry, spec.target_doa) * FS
        np.testing.assert_allclose(peaks - peaks[0], tau - tau[0], atol=1.0)
        xc = np.correlate(sig.target_image[2], sig.target_image[0], "full")
        lag = np.argmax(xc) - (sig.target_image.shape[1] - 1)
        assert abs(lag - (tau[2] - tau[0])) <= 1.0
