"""Front-end steered beamformers (DSB, SDB, MPDR) and the back-end MVDR.

All weights follow the convention ``out(f, k) = w(f)^H v(f, k)``. Front-end
weights are phase-aligned to a reference microphone, so that their output is
time-aligned with the direct path at that microphone rather than at the array
center.
"""

from dataclasses import dataclass

import numpy as np

from .dsp import BACKEND_STFT, FRONTEND_STFT, as_multichannel, istft, stft
from .geometry import SPEED_OF_SOUND, steering_vector

FRONTEND_KINDS = ("DSB", "SDB", "MPDR")
DEFAULT_LOADING = 1e-6

# Front-end loading per kind. Near 1e-6 MPDR cancels the reverberant target
# (its image is not a plane wave) and SDB amplifies uncorrelated reverberation
# at low frequencies. Values chosen on a development sweep of simulated scenes.
FRONTEND_LOADING = {"DSB": 0.0, "SDB": 0.1, "MPDR": 1.0}


class BeamformerError(ArithmeticError):
    """A per-bin beamformer solve failed."""


@dataclass
class SpatialCovariance:
    matrices: np.ndarray  # (F, C, C)
    frame_count_used: int


@dataclass
class BeamformerWeights:
    weights: np.ndarray  # (F, C)
    kind: str
    ref_channel: int


def estimate_scm(spec):
    """Frame-averaged spatial covariance ``(1/K) sum_k v v^H`` for every bin."""
    bins = spec.bins
    n_frames = bins.shape[-1]
    if n_frames == 0:
        raise ValueError("cannot estimate a covariance from zero frames")
    scm = np.einsum("cfk,dfk->fcd", bins, bins.conj()) / n_frames
    return SpatialCovariance(scm, n_frames)


def _trace(m):
    return np.real(np.trace(m, axis1=-2, axis2=-1))


def _align_to_reference(w, steering, ref):
    return w * np.conj(steering[:, ref])[:, None]


def _distortionless(matrix, steering):
    """``R^-1 d / (d^H R^-1 d)`` for every bin."""
    try:
        num = np.linalg.solve(matrix, steering[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise BeamformerError(f"singular matrix in distortionless solve: {exc}") from exc
    den = np.einsum("fc,fc->f", steering.conj(), num)
    if np.any(np.abs(den) == 0) or not np.all(np.isfinite(num)):
        raise BeamformerError("degenerate distortionless normalisation")
    return num / den[:, None]


def dsb_weights(sv, ref=0):
    d = sv.values
    w = d / d.shape[1]
    return BeamformerWeights(_align_to_reference(w, d, ref), "DSB", ref)


def diffuse_coherence(geometry, freq, c_sound=SPEED_OF_SOUND):
    """Spherically isotropic noise coherence ``sinc(2 f d_ij / c)``.

    ``freq`` may be a scalar or an array; the matrix axes are appended.
    """
    if np.any(np.asarray(freq) < 0):
        raise ValueError("frequency must be non-negative")
    freq = np.asarray(freq, dtype=float)
    return np.sinc(2.0 * freq[..., None, None] * geometry.distances() / c_sound)


def sdb_weights(sv, geometry, loading=DEFAULT_LOADING, ref=0, c_sound=SPEED_OF_SOUND):
    if loading < 0:
        raise ValueError("loading must be non-negative")
    n_mics = geometry.n_mics
    gamma = diffuse_coherence(geometry, sv.freqs, c_sound) + loading * np.eye(n_mics)
    w = _distortionless(gamma, sv.values)
    return BeamformerWeights(_align_to_reference(w, sv.values, ref), "SDB", ref)


def _load(matrices, loading):
    n = matrices.shape[-1]
    trace = _trace(matrices)
    loaded = matrices + (loading * trace / n)[:, None, None] * np.eye(n)
    # bins without any energy carry no spatial information; treat them as white
    empty = trace <= 0
    loaded[empty] = np.eye(n)
    return loaded, empty


def mpdr_weights(sv, scm, loading=DEFAULT_LOADING, ref=0):
    loaded, _ = _load(scm.matrices, loading)
    w = _distortionless(loaded, sv.values)
    return BeamformerWeights(_align_to_reference(w, sv.values, ref), "MPDR", ref)


def mvdr_weights_souden(scm_target, scm_noise, ref=0, loading=DEFAULT_LOADING):
    """Reference-channel MVDR computed from target and noise covariances.

    ``w = (Phi_N^-1 Phi_S / tr(Phi_N^-1 Phi_S)) u_ref``. Bins where the noise
    covariance is empty or the trace is at most 1e-12 get zero weights, so a
    degenerate input produces silence at those bins instead of an exception.
    """
    phi_s = scm_target.matrices
    phi_n, empty = _load(scm_noise.matrices, loading)
    n_bins, n_mics, _ = phi_s.shape
    weights = np.zeros((n_bins, n_mics), dtype=complex)
    ok = ~empty
    if np.any(ok):
        try:
            ratio = np.linalg.solve(phi_n[ok], phi_s[ok])
        except np.linalg.LinAlgError as exc:
            raise BeamformerError(f"singular noise covariance: {exc}") from exc
        lam = _trace(ratio)
        good = lam > 1e-12
        w = np.zeros((ok.sum(), n_mics), dtype=complex)
        w[good] = ratio[good, :, ref] / lam[good, None]
        weights[ok] = w
    return BeamformerWeights(weights, "MVDR", ref)


def apply_beamformer(spec, bf):
    w = bf.weights
    if spec.bins.shape[0] != w.shape[1] or spec.bins.shape[1] != w.shape[0]:
        raise ValueError(
            f"weights of shape {w.shape} do not match spectrogram {spec.bins.shape}")
    out = np.einsum("fc,cfk->fk", w.conj(), spec.bins)
    return spec.replace(out[None])


def frontend_weights(kind, sv, geometry, spec=None, loading=None, ref=0,
                     c_sound=SPEED_OF_SOUND):
    kind = kind.upper()
    if kind not in FRONTEND_KINDS:
        raise ValueError(f"unknown front-end beamformer {kind!r}; expected one of {FRONTEND_KINDS}")
    if loading is None:
        loading = FRONTEND_LOADING[kind]
    if kind == "DSB":
        return dsb_weights(sv, ref)
    if kind == "SDB":
        return sdb_weights(sv, geometry, loading, ref, c_sound)
    if kind == "MPDR":
        if spec is None:
            raise ValueError("MPDR needs the mixture spectrogram")
        return mpdr_weights(sv, estimate_scm(spec), loading, ref)
    raise ValueError(f"unknown front-end beamformer {kind!r}; expected one of {FRONTEND_KINDS}")


def frontend_spectra(y, geometry, doa, kind="DSB", refs=(0,), cfg=FRONTEND_STFT,
                     sample_rate=8000, c_sound=SPEED_OF_SOUND, loading=None):
    """Front-end output spectrogram for several reference channels at once.

    The weights for different references differ only by the alignment phase,
    so one solve serves all of them. Returns a spectrogram with one channel per
    entry of ``refs``.
    """
    y = as_multichannel(y)
    if y.shape[0] != geometry.n_mics:
        raise ValueError(f"signal has {y.shape[0]} channels but the array has {geometry.n_mics} mics")
    spec = stft(y, cfg, sample_rate)
    sv = steering_vector(geometry, doa, cfg, sample_rate, c_sound)
    # unaligned weights: w_ref = w0 * conj(d_ref), so out_ref = d_ref * out0
    bf = frontend_weights(kind, sv, geometry, spec, loading, ref=0, c_sound=c_sound)
    bf.weights = bf.weights * sv.values[:, :1]
    out0 = apply_beamformer(spec, bf).bins[0]
    refs = list(refs)
    return spec.replace(sv.values[:, refs].T[:, :, None] * out0[None])


def beamform_frontend(y, geometry, doa, kind="DSB", ref=0, cfg=FRONTEND_STFT, sample_rate=8000,
                      c_sound=SPEED_OF_SOUND, loading=None):
    """Steer towards ``doa`` and return the single-channel output ``z``."""
    y = as_multichannel(y)
    out = frontend_spectra(y, geometry, doa, kind, (ref,), cfg, sample_rate, c_sound, loading)
    return istft(out, y.shape[1])[0]


def beamform_backend(y, target_estimates, ref=0, cfg=BACKEND_STFT, loading=DEFAULT_LOADING,
                     sample_rate=8000):
    """Souden MVDR driven by per-channel target estimates.

    The interferer estimate of every channel is the mixture minus the target
    estimate; both covariances are plain frame averages of their STFTs.
    """
    y = as_multichannel(y)
    xs = as_multichannel(target_estimates)
    if xs.shape != y.shape:
        raise ValueError(f"need one target estimate per channel: {xs.shape} vs {y.shape}")
    spec_y = stft(y, cfg, sample_rate)
    phi_s = estimate_scm(stft(xs, cfg, sample_rate))
    phi_n = estimate_scm(stft(y - xs, cfg, sample_rate))
    bf = mvdr_weights_souden(phi_s, phi_n, ref, loading)
    return istft(apply_beamformer(spec_y, bf), y.shape[1])[0]
