"""WAV files, scene manifests and tool configuration.

WAV support covers RIFF/WAVE with PCM16 or IEEE float32 samples and any
channel count. Scene specs, manifests and configs are JSON documents.
"""

import json
import os
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dsp import ConfigurationError
from .geometry import ArrayGeometry, Doa
from .pipeline import PipelineConfig
from .roomsim import SceneSignals, SimulationRanges

FORMAT_PCM = 1
FORMAT_FLOAT = 3
FORMAT_EXTENSIBLE = 0xFFFE
DEFAULT_SAMPLE_RATE = 8000

MANIFEST_VERSION = 1


class WavError(IOError):
    """Malformed or unsupported WAV data."""


def write_wav(path, wave, sample_rate=DEFAULT_SAMPLE_RATE, fmt="float32"):
    """Write a ``(C, T)`` (or 1-D) waveform.

    ``pcm16`` scales by 32768, rounds to nearest and clips without dither.
    """
    x = np.asarray(wave, dtype=float)
    if x.ndim == 1:
        x = x[None]
    if x.ndim != 2:
        raise ValueError(f"expected a (C, T) waveform, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("waveform contains non-finite samples")
    n_chan = x.shape[0]
    if fmt == "float32":
        code, width = FORMAT_FLOAT, 4
        data = x.T.astype("<f4").tobytes()
    elif fmt == "pcm16":
        code, width = FORMAT_PCM, 2
        data = np.clip(np.round(x.T * 32768.0), -32768, 32767).astype("<i2").tobytes()
    else:
        raise ValueError(f"unsupported WAV format {fmt!r}; expected 'float32' or 'pcm16'")
    sample_rate = int(sample_rate)
    fmt_chunk = struct.pack("<HHIIHH", code, n_chan, sample_rate, sample_rate * n_chan * width,
                            n_chan * width, 8 * width)
    chunks = [b"fmt ", struct.pack("<I", len(fmt_chunk)), fmt_chunk]
    if code == FORMAT_FLOAT:
        # non-PCM formats carry a fact chunk with the frame count
        chunks += [b"fact", struct.pack("<II", 4, x.shape[1])]
    chunks += [b"data", struct.pack("<I", len(data)), data]
    if len(data) % 2:
        chunks.append(b"\x00")
    body = b"WAVE" + b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)


def _parse_fmt(payload, offset):
    if len(payload) < 16:
        raise WavError(f"fmt chunk at offset {offset} is {len(payload)} bytes, need at least 16")
    code, n_chan, rate, _, align, bits = struct.unpack("<HHIIHH", payload[:16])
    if code == FORMAT_EXTENSIBLE:
        if len(payload) < 26:
            raise WavError(f"extensible fmt chunk at offset {offset} is truncated")
        code = struct.unpack("<H", payload[24:26])[0]
    if n_chan < 1:
        raise WavError(f"fmt chunk at offset {offset} declares {n_chan} channels")
    if (code, bits) == (FORMAT_PCM, 16):
        dtype = "<i2"
    elif (code, bits) == (FORMAT_FLOAT, 32):
        dtype = "<f4"
    else:
        raise WavError(f"unsupported codec at offset {offset}: format tag {code}, {bits} bits "
                       "(only PCM16 and float32 are supported)")
    if align != n_chan * bits // 8:
        raise WavError(f"fmt chunk at offset {offset} has block align {align}, expected {n_chan * bits // 8}")
    return dtype, n_chan, rate


def read_wav(path):
    """Read a WAV file; returns ``(wave, sample_rate)`` with ``wave`` of shape (C, T), float64."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise WavError(f"{path}: missing RIFF header (file is {len(raw)} bytes)")
    if raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavError(f"{path}: not a RIFF/WAVE file (bad magic at offset 0)")
    pos = 12
    fmt = None
    while pos + 8 <= len(raw):
        chunk_id = raw[pos:pos + 4]
        size = struct.unpack("<I", raw[pos + 4:pos + 8])[0]
        start = pos + 8
        payload = raw[start:start + size]
        name = chunk_id.decode("latin-1")
        if chunk_id == b"fmt ":
            if len(payload) < size:
                raise WavError(f"{path}: fmt chunk at offset {pos} truncated")
            fmt = _parse_fmt(payload, pos)
        elif chunk_id == b"data":
            if fmt is None:
                raise WavError(f"{path}: data chunk at offset {pos} precedes the fmt chunk")
            if len(payload) < size:
                raise WavError(f"{path}: data chunk at offset {pos} truncated: "
                               f"declares {size} bytes, {len(payload)} present")
            dtype, n_chan, rate = fmt
            frame = n_chan * np.dtype(dtype).itemsize
            if size % frame:
                raise WavError(f"{path}: data chunk at offset {pos} is not a whole number of frames")
            samples = np.frombuffer(payload, dtype=dtype).reshape(-1, n_chan).T
            if dtype == "<i2":
                wave = samples.astype(float) / 32768.0
            else:
                wave = samples.astype(float)
            return wave, rate
        elif len(payload) < size:
            raise WavError(f"{path}: {name!r} chunk at offset {pos} truncated")
        pos = start + size + (size % 2)
    if fmt is None:
        raise WavError(f"{path}: missing fmt chunk")
    raise WavError(f"{path}: missing data chunk")


def save_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc


def _doa_from(value):
    if isinstance(value, Doa):
        return value
    if isinstance(value, dict):
        return Doa(value["azimuth"], value.get("elevation", 0.0))
    return Doa(*value)


@dataclass(frozen=True)
class ManifestRow:
    scene_id: str
    spec_path: str
    mixture: str
    target: str
    interferer: str
    geometry: tuple
    target_doa: Doa
    interferer_doa: Doa

    def to_dict(self):
        return {
            "scene_id": self.scene_id,
            "spec_path": self.spec_path,
            "mixture": self.mixture,
            "target": self.target,
            "interferer": self.interferer,
            "geometry": [list(p) for p in self.geometry],
            "target_doa": self.target_doa.to_dict(),
            "interferer_doa": self.interferer_doa.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            scene_id=str(d["scene_id"]),
            spec_path=d["spec_path"],
            mixture=d["mixture"],
            target=d["target"],
            interferer=d["interferer"],
            geometry=tuple(tuple(float(v) for v in p) for p in d["geometry"]),
            target_doa=_doa_from(d["target_doa"]),
            interferer_doa=_doa_from(d["interferer_doa"]),
        )

    @property
    def array(self):
        return ArrayGeometry(np.array(self.geometry))

    @property
    def angular_spacing(self):
        from .geometry import angular_spacing
        return angular_spacing(self.target_doa, self.interferer_doa)


@dataclass
class Manifest:
    """Scene index of a corpus; file paths in rows are relative to ``root``."""

    root: str
    rows: list = field(default_factory=list)
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        seen = set()
        for row in self.rows:
            if row.scene_id in seen:
                raise ConfigurationError(f"duplicate scene id {row.scene_id!r} in manifest")
            seen.add(row.scene_id)

    def __len__(self):
        return len(self.rows)

    def path(self, relative):
        return os.path.join(self.root, relative)

    def to_dict(self):
        return {"version": MANIFEST_VERSION, "sample_rate": self.sample_rate,
                "scenes": [r.to_dict() for r in self.rows]}

    @classmethod
    def from_dict(cls, d, root):
        if d.get("version", MANIFEST_VERSION) != MANIFEST_VERSION:
            raise ConfigurationError(f"unsupported manifest version {d.get('version')}")
        rows = [ManifestRow.from_dict(r) for r in d.get("scenes", [])]
        return cls(root=root, rows=rows, sample_rate=int(d.get("sample_rate", DEFAULT_SAMPLE_RATE)))

    def save(self, path):
        save_json(path, self.to_dict())

    @classmethod
    def load(cls, path, check_files=True):
        manifest = cls.from_dict(load_json(path), os.path.dirname(os.path.abspath(path)))
        if check_files:
            for row in manifest.rows:
                for rel in (row.spec_path, row.mixture, row.target, row.interferer):
                    if not os.path.exists(manifest.path(rel)):
                        raise ConfigurationError(f"scene {row.scene_id}: missing file {rel}")
        return manifest

    def load_scene(self, row):
        """Mixture and per-source images of one scene as :class:`SceneSignals`."""
        mixture, fs = read_wav(self.path(row.mixture))
        target, fs_t = read_wav(self.path(row.target))
        interferer, fs_i = read_wav(self.path(row.interferer))
        if not fs == fs_t == fs_i:
            raise WavError(f"scene {row.scene_id}: sample rates differ ({fs}, {fs_t}, {fs_i})")
        if mixture.shape[0] != len(row.geometry):
            raise ConfigurationError(
                f"scene {row.scene_id}: mixture has {mixture.shape[0]} channels, "
                f"geometry has {len(row.geometry)} mics")
        return SceneSignals(mixture, target, interferer, fs, row.target_doa, row.interferer_doa)


@dataclass
class ToolConfig:
    """Defaults for the command-line tool, loaded from a JSON document."""

    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    systems: list = field(default_factory=list)
    ranges: SimulationRanges = field(default_factory=SimulationRanges)
    sample_rate: int = DEFAULT_SAMPLE_RATE
    seed: int = 0
    wav_format: str = "float32"

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be positive")
        if self.wav_format not in ("float32", "pcm16"):
            raise ConfigurationError(f"unsupported wav_format {self.wav_format!r}")
        if self.sample_rate != DEFAULT_SAMPLE_RATE:
            warnings.warn(f"sample rate {self.sample_rate} Hz is untested; defaults assume 8000 Hz",
                          stacklevel=2)
        labels = [s.label for s in self.all_systems()]
        if len(set(labels)) != len(labels):
            raise ConfigurationError(f"system names must be unique, got {labels}")

    def all_systems(self):
        return list(self.systems) if self.systems else [self.pipeline]

    def to_dict(self):
        return {
            "pipeline": self.pipeline.to_dict(),
            "systems": [s.to_dict() for s in self.systems],
            "ranges": self.ranges.to_dict(),
            "sample_rate": self.sample_rate,
            "seed": self.seed,
            "wav_format": self.wav_format,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "pipeline" in d:
            kwargs["pipeline"] = PipelineConfig.from_dict(d["pipeline"])
        if "systems" in d:
            kwargs["systems"] = [PipelineConfig.from_dict(s) for s in d["systems"]]
        if "ranges" in d:
            kwargs["ranges"] = SimulationRanges.from_dict(d["ranges"])
        try:
            return cls(**kwargs)
        except (TypeError, KeyError) as exc:
            raise ConfigurationError(f"invalid config: {exc}") from exc

    @classmethod
    def load(cls, path):
        return cls.from_dict(load_json(path))
