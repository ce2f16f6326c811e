"""Shoebox image-source simulation and two-speaker scene generation."""

import math
from functools import lru_cache
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import butter, fftconvolve, lfilter, sosfilt

from .dsp import ConfigurationError, as_multichannel
from .geometry import SPEED_OF_SOUND, Doa, angular_spacing, circular_array

SINC_TAPS = 81


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple
    t60: float
    c_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dimensions)
        if len(dims) != 3 or min(dims) <= 0:
            raise ValueError(f"room dimensions must be three positive lengths, got {dims}")
        if not 0 <= self.t60 <= 2:
            raise ValueError(f"t60 must lie in [0, 2] s, got {self.t60}")
        if self.c_sound <= 0:
            raise ValueError("speed of sound must be positive")
        object.__setattr__(self, "dimensions", dims)

    @property
    def volume(self):
        lx, ly, lz = self.dimensions
        return lx * ly * lz

    @property
    def surface(self):
        lx, ly, lz = self.dimensions
        return 2 * (lx * ly + lx * lz + ly * lz)

    def absorption(self):
        """Uniform wall absorption giving a Schroeder decay of ``t60`` seconds.

        Eyring's formula assumes every ray reflects at the mean-free-path rate,
        but in a shoebox image model grazing paths reflect less often and
        dominate the tail, which stretches the decay by up to ~60%. The image
        model's energy envelope is ``mean_u exp(-kappa * t * g(u))`` with
        ``g(u) = sum_i |u_i| / L_i`` and ``kappa = -c ln(1 - alpha)``; it
        depends on ``kappa * t`` only, so one evaluation at ``kappa = 1`` fixes
        ``kappa`` for any requested decay time.
        """
        if self.t60 == 0:
            return 1.0
        kappa = _unit_decay_times(self.dimensions)[0] / self.t60
        return 1.0 - math.exp(-kappa / self.c_sound)

    def truncation_time(self):
        """Time after which the modelled decay has dropped by 60 dB."""
        if self.t60 == 0:
            return 0.0
        t_fit, t_60 = _unit_decay_times(self.dimensions)
        return self.t60 * t_60 / t_fit

    def contains(self, pos, margin=0.0):
        pos = np.asarray(pos, dtype=float)
        return bool(np.all(pos > margin) and np.all(pos < np.asarray(self.dimensions) - margin))


@lru_cache(maxsize=256)
def _unit_decay_times(dimensions, n_dirs=2048):
    # Fibonacci sphere; by symmetry only |u_i| matters
    k = np.arange(n_dirs) + 0.5
    z = 1 - 2 * k / n_dirs
    phi = np.pi * (1 + 5 ** 0.5) * k
    rho = np.sqrt(1 - z * z)
    u = np.abs(np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1))
    g = u @ (1.0 / np.asarray(dimensions))
    t = np.linspace(0, 60.0 / g.min(), 4000)
    energy = np.exp(-np.outer(t, g)).mean(axis=1)
    edc = np.cumsum(energy[::-1])[::-1]
    edc_db = 10 * np.log10(edc / edc[0])
    sel = (edc_db <= -5) & (edc_db >= -25)
    slope = np.polyfit(t[sel], edc_db[sel], 1)[0]
    return -60.0 / slope, float(np.interp(60.0, -edc_db, t))


def _axis_images(src, length, n_max):
    n = np.arange(-n_max, n_max + 1)
    coords, orders = [], []
    for q in (0, 1):
        coords.append((1 - 2 * q) * src + 2 * n * length)
        orders.append(np.abs(n - q) + np.abs(n))
    return np.concatenate(coords), np.concatenate(orders)


def image_source_rir(room, src, mic, max_order=None, fs=8000, duration=None, taps=SINC_TAPS,
                     sinc_time=0.1, highpass_hz=50.0):
    """Room impulse response from ``src`` to ``mic`` by the Allen-Berkley image method.

    Reflections are kept until ``duration`` seconds (default: the modelled
    60 dB decay time) and, if given, up to ``max_order`` wall reflections. The
    direct path has amplitude ``1/(4 pi r)``. Images arriving within
    ``sinc_time`` seconds are placed with a Hann-windowed sinc fractional
    delay of ``taps`` taps; the dense late tail uses linear interpolation.

    With frequency-flat positive reflections the images add up coherently at
    low frequencies and the tail gains a large DC build-up that slows the
    decay; reverberant responses are therefore high-passed at
    ``highpass_hz`` as in the original image method.
    """
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    if not (room.contains(src) and room.contains(mic)):
        raise ValueError("source and microphone must lie strictly inside the room")
    if max_order is not None and max_order < 0:
        raise ValueError("max_order must be non-negative")
    c = room.c_sound
    beta = math.sqrt(max(1.0 - room.absorption(), 0.0))
    direct = float(np.linalg.norm(src - mic))
    if duration is None:
        duration = room.truncation_time()
    if beta == 0.0 or max_order == 0:
        max_dist = direct
    else:
        max_dist = max(c * duration, direct)

    per_axis = []
    for axis in range(3):
        length = room.dimensions[axis]
        n_max = int(math.ceil(max_dist / (2 * length))) + 1
        coord, order = _axis_images(src[axis], length, n_max)
        per_axis.append((coord - mic[axis], order))
    (dx, ox), (dy, oy), (dz, oz) = per_axis

    dyz2 = (dy[:, None] ** 2 + dz[None, :] ** 2).ravel()
    oyz = (oy[:, None] + oz[None, :]).ravel()
    dists, orders = [], []
    # loop over x images to bound memory
    for xi in range(len(dx)):
        dist = np.sqrt(dx[xi] ** 2 + dyz2)
        order = ox[xi] + oyz
        keep = dist <= max_dist + 1e-9
        if max_order is not None:
            keep &= order <= max_order
        if beta == 0.0:
            keep &= order == 0
        dists.append(dist[keep])
        orders.append(order[keep])
    dist = np.concatenate(dists)
    order = np.concatenate(orders)
    amp = np.power(beta, order) / (4 * np.pi * dist)
    delay = dist / c * fs

    half = taps // 2
    n_out = int(math.ceil(max_dist / c * fs)) + half + 1
    early = delay <= max(sinc_time * fs, direct / c * fs)

    offsets = np.arange(-half, half + 1)
    window = 0.5 * (1 + np.cos(np.pi * offsets / (half + 1)))
    idx = np.round(delay[early]).astype(int)[:, None] + offsets[None, :]
    vals = amp[early, None] * np.sinc(idx - delay[early, None]) * window[None, :]
    valid = (idx >= 0) & (idx < n_out)
    rir = np.bincount(idx[valid], weights=vals[valid], minlength=n_out)

    late_delay = delay[~early]
    lo = np.floor(late_delay).astype(int)
    frac = late_delay - lo
    rir += np.bincount(lo, weights=amp[~early] * (1 - frac), minlength=n_out)[:n_out]
    rir += np.bincount(lo + 1, weights=amp[~early] * frac, minlength=n_out)[:n_out]
    if highpass_hz and np.any(order > 0):
        rir = sosfilt(butter(2, highpass_hz, "highpass", fs=fs, output="sos"), rir)
    return rir


def schroeder_t60(rir, fs, fit_range=(-5.0, -35.0)):
    """Reverberation time from a line fit to the Schroeder energy decay curve.

    The default T30 range reaches past the early part of the curve, which a
    strong direct path at short source distances makes steeper.
    """
    energy = np.asarray(rir, dtype=float) ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    edc_db = 10 * np.log10(np.maximum(edc / edc[0], 1e-300))
    hi, lo = fit_range
    sel = (edc_db <= hi) & (edc_db >= lo)
    if sel.sum() < 2:
        raise ValueError("decay curve does not span the fit range")
    t = np.arange(len(rir))[sel] / fs
    slope, _ = np.polyfit(t, edc_db[sel], 1)
    return -60.0 / slope


FORMANT_BANDS = ((300.0, 900.0), (900.0, 2400.0), (2400.0, 3500.0))


def synthetic_speech(n_samples, fs=8000, seed=0):
    """Speech-like test signal: voiced syllables with formants and noise bursts.

    A glottal pulse train with drifting pitch and a -6 dB/octave tilt drives
    three formant resonators (parallel synthesis), gated by a syllabic
    envelope with pauses. This gives the spectral tilt and time-frequency
    sparsity that masks and beamformers see in real speech.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples) / fs
    out = np.zeros(n_samples)
    pos = int(rng.uniform(0.0, 0.15) * fs)
    f0_base = rng.uniform(90, 230)
    while pos < n_samples:
        length = int(rng.uniform(0.12, 0.35) * fs)
        seg = slice(pos, min(pos + length, n_samples))
        m = seg.stop - seg.start
        tt = t[seg] - t[seg.start]
        if rng.random() < 0.85:
            vibrato = 1 + 0.1 * np.sin(2 * np.pi * rng.uniform(1, 4) * tt)
            f0 = f0_base * (1 + 0.15 * rng.standard_normal()) * vibrato
            phase = 2 * np.pi * np.cumsum(f0) / fs
            # one impulse per pitch period: flat harmonic spectrum before the tilt
            pulses = np.diff(np.floor(phase / (2 * np.pi)), prepend=-1.0)
            excitation = pulses - pulses.mean() + 0.01 * rng.standard_normal(m)
            excitation = lfilter([1.0], [1.0, -0.95], excitation)
            sig = np.zeros(m)
            for (lo, hi), gain in zip(FORMANT_BANDS, (1.0, 0.7, 0.4)):
                fc = rng.uniform(lo, hi)
                r = np.exp(-np.pi * rng.uniform(60, 150) / fs)
                a = [1, -2 * r * np.cos(2 * np.pi * fc / fs), r * r]
                # band-pass resonator: zeros at DC and Nyquist
                sig += lfilter([1 - r, 0, r - 1], a, excitation) * gain
        else:
            sig = lfilter([1, -0.9], [1], rng.standard_normal(m)) * 0.05
        env = np.sin(np.pi * np.arange(m) / max(m - 1, 1)) ** 2
        out[seg] += sig * env * rng.uniform(0.5, 1.0)
        pos = seg.stop + int(rng.exponential(0.08) * fs)
    out -= out.mean()
    peak = np.max(np.abs(out))
    return out / peak * 0.5 if peak > 0 else out


@dataclass
class SceneSignals:
    mixture: np.ndarray  # (C, T)
    target_image: np.ndarray
    interferer_image: np.ndarray
    sample_rate: float = 8000
    target_doa: Doa | None = None
    interferer_doa: Doa | None = None

    def __post_init__(self):
        shapes = {self.mixture.shape, self.target_image.shape, self.interferer_image.shape}
        if len(shapes) != 1:
            raise ValueError(f"scene signals must share one shape, got {shapes}")


def mix_at_sir(target_image, interferer_image, sir_db, ref=0, sample_rate=8000):
    """Scale the interferer so the reference-channel SIR equals ``sir_db``."""
    xs = as_multichannel(target_image)
    xn = as_multichannel(interferer_image)
    if xs.shape != xn.shape:
        raise ValueError(f"image shapes differ: {xs.shape} vs {xn.shape}")
    es = np.sum(xs[ref] ** 2)
    en = np.sum(xn[ref] ** 2)
    if es == 0 or en == 0:
        raise ValueError("both sources need nonzero energy in the reference channel")
    gain = math.sqrt(es / (en * 10 ** (sir_db / 10)))
    xn = xn * gain
    return SceneSignals(xs + xn, xs, xn, sample_rate)


@dataclass
class SimulationRanges:
    room_length: tuple = (5.0, 10.0)
    room_width: tuple = (5.0, 10.0)
    room_height: tuple = (3.0, 4.0)
    t60: tuple = (0.1, 1.0)
    array_radius: tuple = (0.075, 0.125)
    source_distance: tuple = (0.66, 2.0)
    sir_db: tuple = (0.0, 5.0)
    array_height: tuple = (1.0, 2.0)
    angular_spacing: tuple | None = None
    duration: tuple = (2.5, 3.5)
    mic_count: int = 4
    sample_rate: float = 8000
    wall_margin: float = 0.5
    c_sound: float = SPEED_OF_SOUND

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown simulation ranges: {sorted(unknown)}")
        for k, v in d.items():
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class SceneSpec:
    room: RoomSpec
    array_center: tuple
    array_radius: float
    mic_count: int
    source_positions: tuple
    sir_db: float
    seed: int
    sample_rate: float = 8000
    dry_sources: tuple = field(default_factory=tuple)
    source_doas: tuple = field(default=None)

    def __post_init__(self):
        self.array_center = tuple(float(v) for v in self.array_center)
        self.source_positions = tuple(tuple(float(v) for v in p) for p in self.source_positions)
        if len(self.source_positions) != 2:
            raise ValueError("a scene has exactly two sources")
        if not self.room.contains(self.array_center):
            raise ValueError("array center outside the room")
        for p in self.source_positions:
            if not self.room.contains(p):
                raise ValueError(f"source {p} outside the room")
            dist = np.linalg.norm(np.subtract(p, self.array_center))
            if not 0.66 - 1e-9 <= dist <= 2.0 + 1e-9:
                raise ValueError(f"source-array distance {dist:.3f} m outside [0.66, 2.00]")
        if not 0.075 - 1e-12 <= self.array_radius <= 0.125 + 1e-12:
            raise ValueError(f"array radius {self.array_radius} outside [0.075, 0.125] m")
        if not 0 <= self.sir_db <= 5:
            raise ValueError(f"SIR {self.sir_db} outside [0, 5] dB")
        self.source_doas = tuple(
            Doa.from_vector(np.subtract(p, self.array_center)) for p in self.source_positions)

    @property
    def geometry(self):
        return circular_array(self.mic_count, self.array_radius)

    def mic_positions(self):
        return self.geometry.mic_positions + np.asarray(self.array_center)

    @property
    def target_doa(self):
        return self.source_doas[0]

    @property
    def interferer_doa(self):
        return self.source_doas[1]

    @property
    def angular_spacing(self):
        return angular_spacing(*self.source_doas)

    def to_dict(self):
        return {
            "room": {"dimensions": list(self.room.dimensions), "t60": self.room.t60,
                     "c_sound": self.room.c_sound},
            "array_center": list(self.array_center),
            "array_radius": self.array_radius,
            "mic_count": self.mic_count,
            "source_positions": [list(p) for p in self.source_positions],
            "source_doas": [d.to_dict() for d in self.source_doas],
            "sir_db": self.sir_db,
            "seed": self.seed,
            "sample_rate": self.sample_rate,
            "dry_sources": [dict(d) for d in self.dry_sources],
        }

    @classmethod
    def from_dict(cls, d):
        room = RoomSpec(tuple(d["room"]["dimensions"]), d["room"]["t60"],
                        d["room"].get("c_sound", SPEED_OF_SOUND))
        return cls(room=room, array_center=tuple(d["array_center"]),
                   array_radius=d["array_radius"], mic_count=d["mic_count"],
                   source_positions=tuple(tuple(p) for p in d["source_positions"]),
                   sir_db=d["sir_db"], seed=d["seed"], sample_rate=d.get("sample_rate", 8000),
                   dry_sources=tuple(d.get("dry_sources", ())))


def _uniform(rng, bounds):
    lo, hi = bounds
    if hi < lo:
        raise ConfigurationError(f"empty range {bounds}")
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def sample_scene(seed, ranges=None, max_tries=1000):
    """Draw a random two-speaker scene; identical seeds give identical scenes."""
    ranges = ranges or SimulationRanges()
    rng = np.random.default_rng(seed)
    dmin, dmax = ranges.source_distance
    if dmin < 0.66 or dmax > 2.0 or dmin > dmax:
        raise ConfigurationError(f"source distance range {ranges.source_distance} outside [0.66, 2.00] m")
    margin = ranges.wall_margin
    dims = (_uniform(rng, ranges.room_length), _uniform(rng, ranges.room_width),
            _uniform(rng, ranges.room_height))
    if min(dims[:2]) <= 2 * (margin + dmin):
        raise ConfigurationError(f"room {dims} too small for sources at >= {dmin} m")
    room = RoomSpec(dims, _uniform(rng, ranges.t60), ranges.c_sound)
    radius = _uniform(rng, ranges.array_radius)
    sir = _uniform(rng, ranges.sir_db)
    height = min(_uniform(rng, ranges.array_height), dims[2] - margin)
    for _ in range(max_tries):
        center = np.array([rng.uniform(margin, dims[0] - margin),
                           rng.uniform(margin, dims[1] - margin), height])
        az_t = rng.uniform(0, 360)
        if ranges.angular_spacing is None:
            az_i = rng.uniform(0, 360)
        else:
            az_i = az_t + rng.choice([-1, 1]) * _uniform(rng, ranges.angular_spacing)
        dist = rng.uniform(dmin, dmax, size=2)
        positions = []
        for az, r in zip((az_t, az_i), dist):
            a = np.deg2rad(az)
            positions.append(center + r * np.array([np.cos(a), np.sin(a), 0.0]))
        inside = all(room.contains(p, margin) for p in positions)
        clear = all(room.contains(center + m, margin / 2) for m in circular_array(
            ranges.mic_count, radius).mic_positions)
        if inside and clear:
            break
    else:
        raise ConfigurationError("could not place sources inside the room; check the ranges")
    n_samples = int(round(_uniform(rng, ranges.duration) * ranges.sample_rate))
    child = rng.integers(0, 2**31, size=2)
    dry = tuple({"kind": "synthetic", "seed": int(s), "n_samples": n_samples} for s in child)
    return SceneSpec(room, tuple(center), radius, ranges.mic_count, tuple(map(tuple, positions)),
                     sir, int(seed), ranges.sample_rate, dry)


def load_dry_source(desc, sample_rate):
    kind = desc.get("kind")
    if kind == "synthetic":
        return synthetic_speech(int(desc["n_samples"]), sample_rate, int(desc["seed"]))
    if kind == "wav":
        from .io import read_wav
        x, fs = read_wav(desc["path"])
        if fs != sample_rate:
            raise ValueError(f"{desc['path']} is sampled at {fs} Hz, scene expects {sample_rate} Hz")
        return x[0]
    raise ValueError(f"unknown dry source kind {kind!r}")


def scene_rirs(spec, max_order=None):
    """RIRs of shape (2, C, L) for target and interferer."""
    mics = spec.mic_positions()
    rirs = [[image_source_rir(spec.room, src, m, max_order, spec.sample_rate) for m in mics]
            for src in spec.source_positions]
    length = max(len(h) for row in rirs for h in row)
    out = np.zeros((2, len(mics), length))
    for i, row in enumerate(rirs):
        for c, h in enumerate(row):
            out[i, c, :len(h)] = h
    return out


def simulate_scene(spec, dry_target=None, dry_interferer=None, ref=0, max_order=None):
    """Reverberant images and mixture of a scene, truncated to the shorter source."""
    if dry_target is None:
        dry_target = load_dry_source(spec.dry_sources[0], spec.sample_rate)
    if dry_interferer is None:
        dry_interferer = load_dry_source(spec.dry_sources[1], spec.sample_rate)
    rirs = scene_rirs(spec, max_order)
    images = []
    for dry, h in zip((dry_target, dry_interferer), rirs):
        dry = np.asarray(dry, dtype=float)
        images.append(fftconvolve(dry[None], h, axes=-1))
    n = min(im.shape[1] for im in images)
    sig = mix_at_sir(images[0][:, :n], images[1][:, :n], spec.sir_db, ref, spec.sample_rate)
    sig.target_doa, sig.interferer_doa = spec.source_doas
    return sig
