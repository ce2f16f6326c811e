"""SDR, SI-SDR and oracle output selection.

Infinite scores (perfect estimates, orthogonal estimates) are returned as
``inf``/``-inf``; :func:`capped` turns them into finite values for
aggregation.
"""

from dataclasses import dataclass, field

import numpy as np

CAP_DB = 200.0
# residual/signal energy below this is projection round-off (> 250 dB)
EXACT_RATIO = 1e-25


def _pair(ref, est):
    ref = np.asarray(ref, dtype=float)
    est = np.asarray(est, dtype=float)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: reference {ref.shape} vs estimate {est.shape}")
    return ref, est


def _ratio_db(num, den):
    if den == 0:
        return np.inf if num > 0 else np.nan
    if num == 0:
        return -np.inf
    return float(10 * np.log10(num / den))


def sdr(ref, est):
    """Plain signal-to-distortion ratio in dB, ``10 log10(|x|^2 / |x - x_hat|^2)``."""
    ref, est = _pair(ref, est)
    energy = float(np.sum(ref ** 2))
    if energy == 0:
        raise ValueError("reference signal has zero energy")
    return _ratio_db(energy, float(np.sum((ref - est) ** 2)))


def si_sdr(ref, est, zero_mean=False):
    """Scale-invariant SDR in dB.

    The estimate is projected onto the reference, ``alpha = <est, ref> / |ref|^2``,
    and the ratio of the projection to the residual is reported. With
    ``zero_mean`` both signals are mean-removed first.
    """
    ref, est = _pair(ref, est)
    if zero_mean:
        ref = ref - ref.mean()
        est = est - est.mean()
    ref_energy = float(np.sum(ref ** 2))
    if ref_energy == 0:
        raise ValueError("reference signal has zero energy")
    if not np.any(est):
        raise ValueError("estimate has zero energy")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    residual = est - target
    num, den = float(np.sum(target ** 2)), float(np.sum(residual ** 2))
    if den <= EXACT_RATIO * num:
        return np.inf
    return _ratio_db(num, den)


def si_sdr_improvement(ref, est, mixture, zero_mean=False):
    return si_sdr(ref, est, zero_mean) - si_sdr(ref, mixture, zero_mean)


def capped(value, cap=CAP_DB):
    return float(np.clip(value, -cap, cap))


def pit_select(outputs, ref):
    """Index and SI-SDR of the output that best matches ``ref``; ties go to the lowest index."""
    outputs = list(outputs)
    if not outputs:
        raise ValueError("no outputs to select from")
    scores = [si_sdr(ref, o) for o in outputs]
    best = int(np.argmax(scores))
    return best, scores[best]


@dataclass
class MetricResult:
    sdr_db: float
    si_sdr_db: float
    si_sdri_db: float
    flags: list = field(default_factory=list)

    @classmethod
    def compute(cls, ref, est, mixture):
        s = sdr(ref, est)
        si = si_sdr(ref, est)
        base = si_sdr(ref, mixture)
        flags = []
        for name, v in (("sdr", s), ("si_sdr", si)):
            if np.isposinf(v):
                flags.append(f"{name}_inf")
            elif np.isneginf(v):
                flags.append(f"{name}_neginf")
        return cls(s, si, si - base, flags)

    @property
    def is_infinite(self):
        return bool(self.flags)
