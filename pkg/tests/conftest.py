import numpy as np
import pytest

from bgtse.geometry import SPEED_OF_SOUND, plane_wave_delays
from bgtse.roomsim import SimulationRanges, sample_scene, simulate_scene


def fractional_delay(x, delays, fs):
    """Delay ``x`` by each of ``delays`` seconds via an exact FFT phase ramp.

    The signal is zero-padded well beyond the largest delay so the circular
    shift never wraps.
    """
    n = len(x)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    spec = np.fft.rfft(x, nfft)
    f = np.fft.rfftfreq(nfft, 1.0 / fs)
    out = np.fft.irfft(spec[None] * np.exp(-2j * np.pi * f[None] * np.asarray(delays)[:, None]), nfft)
    return out[:, :n]


def plane_wave(signal, geometry, doa, fs=8000, c=SPEED_OF_SOUND, lead=0.01):
    """Far-field plane wave from ``doa`` as received by each microphone.

    ``lead`` seconds of latency keep every delay positive.
    """
    tau = plane_wave_delays(geometry, doa, c)
    return fractional_delay(signal, tau + lead, fs)


@pytest.fixture(scope="session")
def anechoic_scene():
    ranges = SimulationRanges(t60=(0.0, 0.0), angular_spacing=(60.0, 120.0), duration=(2.0, 2.0))
    spec = sample_scene(7, ranges)
    return spec, simulate_scene(spec)


@pytest.fixture(scope="session")
def reverberant_scene():
    ranges = SimulationRanges(t60=(0.4, 0.4), duration=(2.0, 2.0))
    spec = sample_scene(11, ranges)
    return spec, simulate_scene(spec)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    from bgtse.cli import cmd_simulate
    from bgtse.io import ToolConfig

    out = tmp_path_factory.mktemp("corpus")
    config = ToolConfig(ranges=SimulationRanges(duration=(1.0, 1.5), t60=(0.2, 0.5)))
    return cmd_simulate(config, 3, 123, str(out))
