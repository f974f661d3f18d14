"""Noise schedule and the closed-form sampling recurrences.

Timesteps run t = 0..T with alpha-bar values ``alphas[t]``; ``alphas[0] == 1``
is the clean end. The DDIM variance is fixed at sigma_t = sqrt(1 - alpha_{t-1}),
so no sigma array is stored.

Latents are plain float64 arrays of shape (C, H, W). Spatial maps (masks,
entropy divergences) are (H, W) and broadcast over channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coedit.attention import NormKind, coopetition_norm
from coedit.errors import ParameterError, ShapeError

NORM_EPS = 1e-12


@dataclass(frozen=True)
class NoiseSchedule:
    alphas: np.ndarray

    def __post_init__(self):
        a = np.array(self.alphas, dtype=np.float64)
        if a.ndim != 1 or a.size < 3:
            raise ParameterError("schedule needs alphas for t = 0..T with T >= 2")
        if a[0] != 1.0:
            raise ParameterError(f"alpha_0 must be exactly 1, got {a[0]!r}")
        if not np.all(np.diff(a) < 0) or a[-1] <= 0:
            raise ParameterError("alphas must be strictly decreasing and positive")
        a.setflags(write=False)
        object.__setattr__(self, "alphas", a)

    @property
    def T(self) -> int:
        return self.alphas.size - 1

    def alpha(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ParameterError(f"timestep {t} outside 0..{self.T}")
        return float(self.alphas[t])

    def _pair(self, t: int) -> tuple[float, float]:
        if not 1 <= t <= self.T:
            raise ParameterError(f"sampling step t={t} outside 1..{self.T}")
        return float(self.alphas[t]), float(self.alphas[t - 1])


def make_schedule(T: int, alpha_final: float) -> NoiseSchedule:
    """Log-linear alpha-bar schedule from 1 at t=0 to ``alpha_final`` at t=T."""
    if not isinstance(T, (int, np.integer)) or isinstance(T, bool) or T < 2:
        raise ParameterError(f"T must be an integer >= 2, got {T!r}")
    if not 0.0 < alpha_final < 1.0:
        raise ParameterError(f"alpha_final must lie in (0, 1), got {alpha_final!r}")
    frac = np.arange(T + 1, dtype=np.float64) / T
    alphas = np.exp(frac * np.log(alpha_final))
    alphas[0] = 1.0
    alphas[-1] = alpha_final
    return NoiseSchedule(alphas)


def _same_shape(*arrays):
    shape = np.shape(arrays[0])
    for a in arrays[1:]:
        if np.shape(a) != shape:
            raise ShapeError(f"shape mismatch: {shape} vs {np.shape(a)}")


def _spatial(m, latent_shape, name):
    m = np.asarray(m, dtype=np.float64)
    if m.shape != tuple(latent_shape[-2:]):
        raise ShapeError(f"{name} shape {m.shape} does not match latent grid {latent_shape[-2:]}")
    return m


def forward_noise(x0, eps, sched: NoiseSchedule, t: int):
    """On-manifold point sqrt(a_t) x0 + sqrt(1 - a_t) eps."""
    _same_shape(x0, eps)
    a = sched.alpha(t)
    return np.sqrt(a) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - a) * np.asarray(eps, dtype=np.float64)


def ddim_step(z_t, eps_pred, eps_noise, sched: NoiseSchedule, t: int):
    _same_shape(z_t, eps_pred, eps_noise)
    a_t, a_prev = sched._pair(t)
    z_t = np.asarray(z_t, dtype=np.float64)
    return (np.sqrt(a_prev / a_t) * (z_t - np.sqrt(1.0 - a_t) * np.asarray(eps_pred))
            + np.sqrt(1.0 - a_prev) * np.asarray(eps_noise))


def ddcm_reverse(z0, z_e, z_s, eps_e, eps_s, eps_noise, sched: NoiseSchedule, t: int,
                 eps_sign: float = 1.0):
    """Consistency-model reverse step of the editing branch.

    ``eps_sign`` multiplies the (eps_e - eps_s) term. The default +1 adds the
    noise-prediction gap. -1 subtracts it; that is what a DDIM step from the
    branch-corrected estimate x0 = z0 + ((z_e - z_s) - sqrt(1 - a_t)(eps_e - eps_s)) / sqrt(a_t)
    produces, and it is the sign under which an exact denoiser puts the
    editing branch on the target's noising manifold.
    """
    _same_shape(z0, z_e, z_s, eps_e, eps_s, eps_noise)
    a_t, a_prev = sched._pair(t)
    z0, z_e, z_s = (np.asarray(v, dtype=np.float64) for v in (z0, z_e, z_s))
    d_eps = np.asarray(eps_e, dtype=np.float64) - np.asarray(eps_s, dtype=np.float64)
    return (np.sqrt(a_prev) * z0
            + np.sqrt(a_prev / a_t) * (z_e - z_s)
            + eps_sign * np.sqrt((1.0 - a_t) * a_prev / a_t) * d_eps
            + np.sqrt(1.0 - a_prev) * np.asarray(eps_noise, dtype=np.float64))


def coedit_final_step(z0, z_e, z_s, eps_e, eps_s, mask, h_d, eps_noise, sched: NoiseSchedule,
                      t: int, norm: NormKind = NormKind.L2_RMS, *,
                      eq4_consistent_scaling: bool = False, eps_sign: float = 1.0):
    """Masked consistency step that also injects the normalized entropy divergence.

    The branch difference is gated by ``mask`` and scaled by sqrt(a_{t-1});
    ``eq4_consistent_scaling`` swaps in sqrt(a_{t-1} / a_t) as in ``ddcm_reverse``.
    A divergence map whose norm is below 1e-12 contributes nothing.
    """
    _same_shape(z0, z_e, z_s, eps_e, eps_s, eps_noise)
    shape = np.shape(z0)
    mask = _spatial(mask, shape, "mask")
    h_d = _spatial(h_d, shape, "h_d")
    a_t, a_prev = sched._pair(t)
    z0, z_e, z_s = (np.asarray(v, dtype=np.float64) for v in (z0, z_e, z_s))
    d_eps = np.asarray(eps_e, dtype=np.float64) - np.asarray(eps_s, dtype=np.float64)

    branch_coef = np.sqrt(a_prev / a_t) if eq4_consistent_scaling else np.sqrt(a_prev)
    scale = coopetition_norm(h_d, norm)
    h_term = h_d / scale if scale >= NORM_EPS else np.zeros_like(h_d)

    return (np.sqrt(a_prev) * z0
            + branch_coef * (z_e - z_s) * mask
            + eps_sign * np.sqrt((1.0 - a_t) * a_prev / a_t) * d_eps
            + np.sqrt(1.0 - a_prev) * (np.asarray(eps_noise, dtype=np.float64) + h_term))
