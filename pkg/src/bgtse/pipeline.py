"""Beamformer-guided target speaker extraction.

A front-end beamformer steered at the target DOA produces an auxiliary
signal ``z``; an extractor maps ``(y[c], z[c])`` to a target estimate for
channel ``c``. With the back-end enabled the extraction is repeated for every
channel and the estimates drive a Souden MVDR.

The neural extractor is replaced by oracle and deterministic stand-ins; any
trained model can be attached through the ``external-command`` extractor.
"""

import os
import shlex
import subprocess
import tempfile
from dataclasses import dataclass, field, replace

import numpy as np

from .beamforming import DEFAULT_LOADING, FRONTEND_KINDS, FRONTEND_LOADING, beamform_backend, frontend_spectra
from .dsp import BACKEND_STFT, FRONTEND_STFT, ConfigurationError, StftConfig, as_multichannel, istft, stft
from .features import apply_mask, coherence_mask, irm
from .geometry import SPEED_OF_SOUND, Doa, angular_spacing

EXTRACTOR_KINDS = ("oracle-irm", "oracle-signal", "coherence-mask", "external-command")

EXTRACTOR_STFT = StftConfig(window_size=256, hop=64, center_pad=True)


class ExtractorError(RuntimeError):
    """The extractor failed to produce an estimate."""


@dataclass(frozen=True)
class ExtractorSpec:
    kind: str = "oracle-irm"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EXTRACTOR_KINDS:
            raise ConfigurationError(f"unknown extractor {self.kind!r}; expected one of {EXTRACTOR_KINDS}")
        if self.kind == "external-command" and not self.params.get("command"):
            raise ConfigurationError("external-command extractor needs a 'command' parameter")

    @property
    def needs_oracle(self):
        return self.kind.startswith("oracle-")

    def stft_config(self):
        cfg = self.params.get("stft")
        if cfg is None:
            return EXTRACTOR_STFT
        return cfg if isinstance(cfg, StftConfig) else StftConfig(**cfg)

    def to_dict(self):
        params = dict(self.params)
        if isinstance(params.get("stft"), StftConfig):
            params["stft"] = params["stft"].to_dict()
        return {"kind": self.kind, "params": params}


@dataclass(frozen=True)
class PipelineConfig:
    frontend_kind: str = "DSB"
    frontend_stft: StftConfig = FRONTEND_STFT
    backend_enabled: bool = False
    backend_stft: StftConfig = BACKEND_STFT
    ref_channel: int = 0
    extractor: ExtractorSpec = field(default_factory=ExtractorSpec)
    c_sound: float = SPEED_OF_SOUND
    frontend_loading: float | None = None
    backend_loading: float = DEFAULT_LOADING
    name: str | None = None

    def __post_init__(self):
        kind = self.frontend_kind.upper()
        if kind not in FRONTEND_KINDS:
            raise ConfigurationError(f"unknown front-end {self.frontend_kind!r}; expected one of {FRONTEND_KINDS}")
        object.__setattr__(self, "frontend_kind", kind)
        if self.ref_channel < 0:
            raise ConfigurationError("ref_channel must be non-negative")
        if self.c_sound <= 0:
            raise ConfigurationError("c_sound must be positive")

    @property
    def loading(self):
        if self.frontend_loading is not None:
            return self.frontend_loading
        return FRONTEND_LOADING[self.frontend_kind]

    @property
    def label(self):
        if self.name:
            return self.name
        return f"{self.frontend_kind.lower()}+{self.extractor.kind}"

    def with_ref(self, ref):
        return replace(self, ref_channel=ref)

    def to_dict(self):
        return {
            "name": self.name,
            "frontend_kind": self.frontend_kind,
            "frontend_stft": self.frontend_stft.to_dict(),
            "frontend_loading": self.frontend_loading,
            "backend_enabled": self.backend_enabled,
            "backend_stft": self.backend_stft.to_dict(),
            "backend_loading": self.backend_loading,
            "ref_channel": self.ref_channel,
            "extractor": self.extractor.to_dict(),
            "c_sound": self.c_sound,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("frontend_stft", "backend_stft"):
            if isinstance(d.get(key), dict):
                d[key] = StftConfig(**d[key])
        if isinstance(d.get("extractor"), dict):
            d["extractor"] = ExtractorSpec(**d["extractor"])
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown pipeline settings: {sorted(unknown)}")
        return cls(**d)


def _oracle_images(oracle, steer_doa):
    """Target/interferer images as seen by an extractor steered at ``steer_doa``.

    An oracle extractor returns the source closest to the steering direction,
    which is the target unless the DOA error exceeds half the spacing.
    """
    if oracle is None:
        raise ConfigurationError("oracle extractors need the scene's source images")
    xs, xn = oracle.target_image, oracle.interferer_image
    if oracle.target_doa is not None and oracle.interferer_doa is not None:
        if angular_spacing(steer_doa, oracle.interferer_doa) < angular_spacing(steer_doa, oracle.target_doa):
            xs, xn = xn, xs
    return xs, xn


def _run_external(command, mixture, auxiliary, sample_rate):
    from .io import read_wav, write_wav

    argv = shlex.split(command) if isinstance(command, str) else list(command)
    with tempfile.TemporaryDirectory(prefix="bgtse-ext-") as tmp:
        mix_path = os.path.join(tmp, "mixture.wav")
        aux_path = os.path.join(tmp, "auxiliary.wav")
        out_path = os.path.join(tmp, "estimate.wav")
        write_wav(mix_path, mixture, sample_rate)
        write_wav(aux_path, auxiliary, sample_rate)
        proc = subprocess.run(argv + [mix_path, aux_path, out_path], capture_output=True, text=True)
        if proc.returncode != 0:
            raise ExtractorError(
                f"extractor command exited with status {proc.returncode}: {proc.stderr.strip()[-500:]}")
        if not os.path.exists(out_path):
            raise ExtractorError("extractor command did not write an estimate")
        est, fs = read_wav(out_path)
    if est.shape[0] != 1 or est.shape[1] != len(mixture):
        raise ExtractorError(f"extractor returned shape {est.shape}, expected (1, {len(mixture)})")
    if fs != sample_rate:
        raise ExtractorError(f"extractor returned {fs} Hz audio, expected {sample_rate} Hz")
    return est[0].astype(float)


def extract(spec, mixture, auxiliary, channel, steer_doa, oracle=None, sample_rate=8000):
    """Single-channel TSE stand-in: estimate of the target in ``mixture`` (one channel)."""
    n = len(mixture)
    if spec.kind == "oracle-signal":
        xs, _ = _oracle_images(oracle, steer_doa)
        return np.array(xs[channel], dtype=float)
    if spec.kind == "oracle-irm":
        xs, xn = _oracle_images(oracle, steer_doa)
        cfg = spec.stft_config()
        y_spec = stft(mixture, cfg, sample_rate)
        mask = irm(stft(xs[channel], cfg, sample_rate), stft(xn[channel], cfg, sample_rate),
                   spec.params.get("exponent", 1.0))
        return istft(apply_mask(y_spec, mask), n)[0]
    if spec.kind == "coherence-mask":
        cfg = spec.stft_config()
        y_spec = stft(mixture, cfg, sample_rate)
        mask = coherence_mask(y_spec, stft(auxiliary, cfg, sample_rate),
                              spec.params.get("smoothing", 0.7))
        return istft(apply_mask(y_spec, mask), n)[0]
    if spec.kind == "external-command":
        return _run_external(spec.params["command"], mixture, auxiliary, sample_rate)
    raise ConfigurationError(f"unknown extractor {spec.kind!r}")


def _validate(y, geometry, doa, cfg, oracle):
    y = as_multichannel(y)
    if y.shape[1] == 0:
        raise ValueError("mixture is empty")
    if not isinstance(doa, Doa):
        raise ValueError("target direction must be a Doa")
    if y.shape[0] != geometry.n_mics:
        raise ConfigurationError(f"mixture has {y.shape[0]} channels, array has {geometry.n_mics} mics")
    if cfg.ref_channel >= y.shape[0]:
        raise ConfigurationError(f"ref_channel {cfg.ref_channel} out of range for {y.shape[0]} channels")
    if cfg.extractor.needs_oracle:
        if oracle is None:
            raise ConfigurationError(f"{cfg.extractor.kind} extractor needs oracle scene signals")
        if oracle.target_image.shape != y.shape:
            raise ConfigurationError("oracle images do not match the mixture shape")
    return y


def auxiliary_signals(y, geometry, doa, cfg, channels, sample_rate=8000):
    """Front-end outputs ``z[c]`` for the given reference channels, shape (len(channels), T)."""
    y = as_multichannel(y)
    spec = frontend_spectra(y, geometry, doa, cfg.frontend_kind, channels, cfg.frontend_stft,
                            sample_rate, cfg.c_sound, cfg.loading)
    return istft(spec, y.shape[1])


def _per_channel_estimates(y, geometry, doa, cfg, oracle, channels, sample_rate):
    z = auxiliary_signals(y, geometry, doa, cfg, channels, sample_rate)
    return np.stack([extract(cfg.extractor, y[c], z[i], c, doa, oracle, sample_rate)
                     for i, c in enumerate(channels)])


def run_bg_tse(y, geometry, doa, cfg, oracle=None, sample_rate=8000):
    """Target estimate at the reference channel, ``TSE(y[ref], BF(y, doa, ref))``."""
    y = _validate(y, geometry, doa, cfg, oracle)
    ref = cfg.ref_channel
    return _per_channel_estimates(y, geometry, doa, cfg, oracle, [ref], sample_rate)[0]


def run_bg_tse_with_backend(y, geometry, doa, cfg, oracle=None, sample_rate=8000,
                            return_channel_estimates=False):
    """Per-channel BG-TSE followed by the estimate-driven back-end MVDR."""
    y = _validate(y, geometry, doa, cfg, oracle)
    if y.shape[0] < 2:
        raise ConfigurationError("the back-end beamformer needs at least two channels")
    estimates = _per_channel_estimates(y, geometry, doa, cfg, oracle, list(range(y.shape[0])),
                                       sample_rate)
    out = beamform_backend(y, estimates, cfg.ref_channel, cfg.backend_stft, cfg.backend_loading,
                           sample_rate)
    if return_channel_estimates:
        return out, estimates
    return out


def run_pipeline(y, geometry, doa, cfg, oracle=None, sample_rate=8000):
    """All outputs of a configuration: ``{"xhat": ...}`` plus ``"xhat_bf"`` with the back-end."""
    if not cfg.backend_enabled:
        return {"xhat": run_bg_tse(y, geometry, doa, cfg, oracle, sample_rate)}
    out, estimates = run_bg_tse_with_backend(y, geometry, doa, cfg, oracle, sample_rate,
                                             return_channel_estimates=True)
    return {"xhat": estimates[cfg.ref_channel], "xhat_bf": out}


def interferer_estimate(y_c, xhat_c):
    y_c = np.asarray(y_c, dtype=float)
    xhat_c = np.asarray(xhat_c, dtype=float)
    if y_c.shape != xhat_c.shape:
        raise ValueError(f"length mismatch: {y_c.shape} vs {xhat_c.shape}")
    return y_c - xhat_c
