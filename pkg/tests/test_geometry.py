import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bgtse.dsp import FRONTEND_STFT
from bgtse.geometry import (SPEED_OF_SOUND, ArrayGeometry, Doa, angular_spacing, circular_array,
                            plane_wave_delays, steering_vector)


class TestDoa:
    def test_wraps_azimuth(self):
        assert Doa(370.0).azimuth == pytest.approx(10.0)
        assert Doa(-90.0).azimuth == pytest.approx(270.0)

    @pytest.mark.parametrize("el", [90.5, -91.0, np.nan])
    def test_invalid_elevation(self, el):
        with pytest.raises(ValueError):
            Doa(0.0, el)

    def test_unit_vector(self):
        np.testing.assert_allclose(Doa(90.0).unit_vector(), [0, 1, 0], atol=1e-15)
        np.testing.assert_allclose(Doa(0.0, 90.0).unit_vector(), [0, 0, 1], atol=1e-15)

    @given(st.floats(0, 359.9), st.floats(-89, 89))
    def test_vector_round_trip(self, az, el):
        d = Doa.from_vector(3.0 * Doa(az, el).unit_vector())
        assert angular_spacing(d, Doa(az, el)) < 1e-6

    def test_rotated(self):
        assert Doa(355.0, 10.0).rotated(10.0) == Doa(5.0, 10.0)


class TestArray:
    def test_circular_layout(self):
        g = circular_array(4, 0.1)
        np.testing.assert_allclose(np.linalg.norm(g.mic_positions, axis=1), 0.1)
        np.testing.assert_array_equal(g.mic_positions[1], [0.0, 0.1, 0.0])
        d = g.distances()
        np.testing.assert_allclose(d, d.T)
        assert d[0, 2] == pytest.approx(0.2)
        assert d[0, 1] == pytest.approx(0.1 * np.sqrt(2))

    @pytest.mark.parametrize("pos", [np.zeros((2, 3)), np.ones((2, 2)), [[0, 0, np.inf]]])
    def test_invalid_positions(self, pos):
        with pytest.raises(ValueError):
            ArrayGeometry(np.asarray(pos, dtype=float))

    def test_positions_read_only(self):
        g = circular_array(3, 0.05)
        with pytest.raises(ValueError):
            g.mic_positions[0, 0] = 1.0

    def test_permuted(self):
        g = circular_array(4, 0.1)
        np.testing.assert_array_equal(g.permuted([2, 0, 1, 3]).mic_positions[0], g.mic_positions[2])


class TestDelays:
    def test_endfire_pair(self):
        # two mics on the x axis, source along +x: the +x mic hears it d/c earlier
        g = ArrayGeometry(np.array([[0.05, 0, 0], [-0.05, 0, 0]]))
        tau = plane_wave_delays(g, Doa(0.0))
        np.testing.assert_allclose(tau, [-0.05 / SPEED_OF_SOUND, 0.05 / SPEED_OF_SOUND])

    def test_broadside_is_zero(self):
        g = ArrayGeometry(np.array([[0.05, 0, 0], [-0.05, 0, 0]]))
        np.testing.assert_allclose(plane_wave_delays(g, Doa(90.0)), 0.0, atol=1e-18)

    def test_bad_speed(self):
        with pytest.raises(ValueError):
            plane_wave_delays(circular_array(4, 0.1), Doa(0.0), 0.0)


class TestSteering:
    def test_unit_modulus_and_dc(self):
        sv = steering_vector(circular_array(4, 0.1), Doa(33.0), FRONTEND_STFT, 8000)
        assert sv.values.shape == (513, 4)
        np.testing.assert_allclose(np.abs(sv.values), 1.0, atol=1e-12)
        np.testing.assert_allclose(sv.values[0], 1.0)

    def test_phase_matches_delay(self):
        g = circular_array(4, 0.1)
        sv = steering_vector(g, Doa(200.0), FRONTEND_STFT, 8000)
        tau = plane_wave_delays(g, Doa(200.0))
        f = sv.freqs[100]
        np.testing.assert_allclose(sv.values[100], np.exp(-2j * np.pi * f * tau))


class TestAngularSpacing:
    @pytest.mark.parametrize("a,b,expected", [
        (Doa(10.0), Doa(50.0), 40.0),
        (Doa(350.0), Doa(10.0), 20.0),
        (Doa(0.0), Doa(180.0), 180.0),
        (Doa(0.0, 0.0), Doa(0.0, 90.0), 90.0),
        (Doa(123.0, 20.0), Doa(123.0, 20.0), 0.0),
    ])
    def test_known(self, a, b, expected):
        assert angular_spacing(a, b) == pytest.approx(expected, abs=1e-9)
