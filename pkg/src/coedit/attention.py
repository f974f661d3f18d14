"""Spatial coopetition: background attention, dual directional entropies and
the entropy-guided ownership threshold.

All maps are float (H, W) arrays. Attention maps are expected in [0, 1].
"""

from __future__ import annotations

import enum

import numpy as np

from coedit.errors import DegenerateAttentionError, ParameterError, ShapeError

DEFAULT_CLAMP = 1e-6
HARD_THRESHOLD = 0.3
_TIE_EPS = 1e-12


class NormKind(str, enum.Enum):
    L2_RMS = "L2_RMS"
    FROBENIUS = "FROBENIUS"
    L1_MEAN = "L1_MEAN"
    LINF = "LINF"


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _check_clamp(clamp):
    if not 0.0 < clamp < 0.5:
        raise ParameterError(f"log clamp must lie in (0, 0.5), got {clamp!r}")


def minmax_normalize(m):
    """Rescale to [0, 1]; a constant map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi - lo <= 0:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def background_attention(a_s, a_e):
    a_s, a_e = _check_pair(a_s, a_e)
    return np.maximum(a_s - a_e, 0.0)


def editing_entropy(a_e, a_bg, clamp: float = DEFAULT_CLAMP):
    """-a_e * log(a_bg), with a_bg clamped from below."""
    a_e, a_bg = _check_pair(a_e, a_bg)
    _check_clamp(clamp)
    return -a_e * np.log(np.maximum(a_bg, clamp))


def reconstruction_entropy(a_e, a_bg, clamp: float = DEFAULT_CLAMP):
    """-(1 - a_e) * log(1 - a_bg), the reflected counterpart of ``editing_entropy``."""
    a_e, a_bg = _check_pair(a_e, a_bg)
    _check_clamp(clamp)
    return -(1.0 - a_e) * np.log(np.maximum(1.0 - a_bg, clamp))


def coopetition_norm(m, kind: NormKind | str = NormKind.L2_RMS) -> float:
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        raise ParameterError("norm of an empty grid is undefined")
    kind = NormKind(kind)
    if kind is NormKind.L2_RMS:
        return float(np.sqrt(np.mean(m * m)))
    if kind is NormKind.FROBENIUS:
        return float(np.sqrt(np.sum(m * m)))
    if kind is NormKind.L1_MEAN:
        return float(np.mean(np.abs(m)))
    return float(np.max(np.abs(m)))


def lorenz_factor(a_e) -> float:
    """(sum_i S_i / S_p - 1) / p over the ascending cumulative sums of ``a_e``.

    Zero when all mass sits in one cell, (p - 1) / (2p) for a uniform map.
    """
    s = np.sort(np.asarray(a_e, dtype=np.float64).ravel())
    total = s.sum()
    if not total > 0:
        raise DegenerateAttentionError("editing attention map has no positive mass")
    cum = np.cumsum(s)
    return float((np.sum(cum / total) - 1.0) / s.size)


def ownership_threshold(a_e, h_e, h_s, kind: NormKind | str = NormKind.L2_RMS) -> float:
    a_e = np.asarray(a_e, dtype=np.float64)
    if not (a_e.shape == np.shape(h_e) == np.shape(h_s)):
        raise ShapeError(f"shape mismatch: {a_e.shape}, {np.shape(h_e)}, {np.shape(h_s)}")
    lorenz = lorenz_factor(a_e)
    n_e = coopetition_norm(h_e, kind)
    n_s = coopetition_norm(h_s, kind)
    total = n_e + n_s
    # both norms vanish: split the claim evenly
    ratio = 0.5 if total < _TIE_EPS else n_e / total
    return float(np.clip(lorenz * ratio + 0.5 * total, 0.0, 1.0))


def ownership_mask(a_e, threshold: float):
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {threshold!r}")
    return (np.asarray(a_e) >= threshold).astype(np.float64)


def hard_threshold_mask(a_e, fixed: float = HARD_THRESHOLD):
    return ownership_mask(a_e, fixed)


def dual_entropy(a_s, a_e, clamp: float = DEFAULT_CLAMP, normalize: bool = False):
    """Background map plus editing/reconstruction entropies for one step.

    With ``normalize`` both entropies are divided by -log(clamp), their upper
    bound, so they land in [0, 1] like the attention maps they came from.
    """
    a_bg = background_attention(a_s, a_e)
    h_e = editing_entropy(a_e, a_bg, clamp)
    h_s = reconstruction_entropy(a_e, a_bg, clamp)
    if normalize:
        bound = -np.log(clamp)
        h_e, h_s = h_e / bound, h_s / bound
    return a_bg, h_e, h_s
