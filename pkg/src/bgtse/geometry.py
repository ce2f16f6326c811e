"""Array geometry, plane-wave delays and far-field steering vectors."""

from dataclasses import dataclass

import numpy as np

SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class Doa:
    """Direction of arrival in degrees; azimuth is wrapped into [0, 360)."""

    azimuth: float
    elevation: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.azimuth) and np.isfinite(self.elevation)):
            raise ValueError("DOA angles must be finite")
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation {self.elevation} outside [-90, 90]")
        object.__setattr__(self, "azimuth", float(self.azimuth) % 360.0)
        object.__setattr__(self, "elevation", float(self.elevation))

    def unit_vector(self):
        az, el = np.deg2rad(self.azimuth), np.deg2rad(self.elevation)
        return np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])

    def rotated(self, delta_azimuth):
        return Doa(self.azimuth + delta_azimuth, self.elevation)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        r = np.linalg.norm(v)
        if r == 0:
            raise ValueError("cannot take the direction of a zero vector")
        az = np.rad2deg(np.arctan2(v[1], v[0]))
        el = np.rad2deg(np.arcsin(np.clip(v[2] / r, -1.0, 1.0)))
        return cls(az, el)

    def to_dict(self):
        return {"azimuth": self.azimuth, "elevation": self.elevation}


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions in meters, relative to the array center."""

    mic_positions: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.mic_positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"mic_positions must be (C, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("mic positions must be finite")
        dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        if np.any(dist[~np.eye(len(pos), dtype=bool)] == 0):
            raise ValueError("mic positions must be pairwise distinct")
        pos.setflags(write=False)
        object.__setattr__(self, "mic_positions", pos)

    @property
    def n_mics(self):
        return self.mic_positions.shape[0]

    def distances(self):
        p = self.mic_positions
        return np.linalg.norm(p[:, None] - p[None], axis=-1)

    def permuted(self, order):
        return ArrayGeometry(self.mic_positions[list(order)])

    def to_list(self):
        return self.mic_positions.tolist()


def circular_array(n_mics, radius):
    """Equally spaced mics on a horizontal circle, mic 0 at azimuth 0."""
    if n_mics < 1:
        raise ValueError("need at least one microphone")
    if radius <= 0:
        raise ValueError("radius must be positive")
    phi = 2 * np.pi * np.arange(n_mics) / n_mics
    pos = np.stack([radius * np.cos(phi), radius * np.sin(phi), np.zeros(n_mics)], axis=1)
    # exact zeros instead of 6e-18 leftovers from cos(pi/2)
    pos[np.abs(pos) < 1e-15 * radius] = 0.0
    return ArrayGeometry(pos)


def plane_wave_delays(geometry, doa, c_sound=SPEED_OF_SOUND):
    """Per-mic arrival time relative to the array center, in seconds.

    Mics closer to the source receive the wavefront earlier and get a
    negative delay.
    """
    if c_sound <= 0:
        raise ValueError("speed of sound must be positive")
    return -(geometry.mic_positions @ doa.unit_vector()) / c_sound


@dataclass(frozen=True)
class SteeringVector:
    values: np.ndarray  # (F, C), unit modulus
    freqs: np.ndarray  # (F,) Hz
    doa: Doa


def steering_vector(geometry, doa, cfg, sample_rate, c_sound=SPEED_OF_SOUND):
    freqs = cfg.bin_frequencies(sample_rate)
    tau = plane_wave_delays(geometry, doa, c_sound)
    values = np.exp(-2j * np.pi * freqs[:, None] * tau[None, :])
    return SteeringVector(values, freqs, doa)


def angular_spacing(a, b):
    """Great-circle angle between two DOAs, in degrees."""
    u, v = a.unit_vector(), b.unit_vector()
    return float(np.rad2deg(np.arctan2(np.linalg.norm(np.cross(u, v)), u @ v)))
