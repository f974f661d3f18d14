"""Temporal coopetition: cross-step entropy divergence, the direction noise and
the N_o-iteration latent refinement of the editing branch."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from coedit.attention import DEFAULT_CLAMP, dual_entropy
from coedit.errors import NumericDivergenceError, ParameterError, ShapeError
from coedit.schedule import NoiseSchedule

STD_EPS = 1e-12
STEP_SCHEDULES = ("constant", "sqrt_alpha")


@dataclass(frozen=True)
class RefinementConfig:
    n_o: int = 50
    step_size: float = 1.0
    # "sqrt_alpha" uses step_size * sqrt(alpha_t); "constant" uses step_size as is
    step_schedule: str = "sqrt_alpha"
    detach_direction: bool = True
    static_divergence: bool = False

    def __post_init__(self):
        if isinstance(self.n_o, bool) or not isinstance(self.n_o, (int, np.integer)) or self.n_o < 1:
            raise ParameterError(f"n_o must be an integer >= 1, got {self.n_o!r}")
        if not self.step_size > 0:
            raise ParameterError(f"step_size must be positive, got {self.step_size!r}")
        if self.step_schedule not in STEP_SCHEDULES:
            raise ParameterError(f"step_schedule must be one of {STEP_SCHEDULES}, got {self.step_schedule!r}")

    def step_at(self, sched: NoiseSchedule, t: int) -> float:
        if self.step_schedule == "sqrt_alpha":
            return self.step_size * float(np.sqrt(sched.alpha(t)))
        return self.step_size


@dataclass
class EntropyState:
    """Entropy maps cached from the previous (t+1) sampling step."""

    h_e_prev: np.ndarray
    h_s_prev: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "EntropyState":
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class RefinementResult:
    z_e: np.ndarray
    h_d: np.ndarray
    eps_e: np.ndarray
    a_e: np.ndarray
    h_e: np.ndarray
    h_s: np.ndarray
    iterations: int = 0
    step_size: float = 1.0
    losses: list = field(default_factory=list)


def entropy_divergence(h_e_t, h_s_t, state: EntropyState):
    h_e_t = np.asarray(h_e_t, dtype=np.float64)
    h_s_t = np.asarray(h_s_t, dtype=np.float64)
    shapes = {h_e_t.shape, h_s_t.shape, np.shape(state.h_e_prev), np.shape(state.h_s_prev)}
    if len(shapes) != 1:
        raise ShapeError(f"entropy maps disagree in shape: {sorted(shapes)}")
    h_ed = h_e_t - state.h_e_prev
    h_sd = h_s_t - state.h_s_prev
    return h_ed, h_sd, h_ed - h_sd


def standardize(m):
    """Zero-mean, unit-std version of ``m``; all zeros when ``m`` is (near) constant."""
    m = np.asarray(m, dtype=np.float64)
    sd = m.std()
    if sd < STD_EPS:
        return np.zeros_like(m)
    return (m - m.mean()) / sd


def direction_noise(eps_e, eps_s, h_d, sched: NoiseSchedule, t: int):
    eps_e = np.asarray(eps_e, dtype=np.float64)
    eps_s = np.asarray(eps_s, dtype=np.float64)
    if eps_e.shape != eps_s.shape:
        raise ShapeError(f"shape mismatch: {eps_e.shape} vs {eps_s.shape}")
    h_d = np.asarray(h_d, dtype=np.float64)
    if h_d.shape != eps_e.shape[-2:]:
        raise ShapeError(f"h_d shape {h_d.shape} does not match latent grid {eps_e.shape[-2:]}")
    a_t = sched.alpha(t)
    return np.sqrt((1.0 - a_t) / a_t) * (eps_e - eps_s + standardize(h_d))


def refinement_loss(eps_dir, z, mask) -> float:
    """L = sum(eps_dir * z * mask); its z-gradient with eps_dir held fixed is eps_dir * mask."""
    return float(np.sum(np.asarray(eps_dir) * np.asarray(z) * np.asarray(mask)))


def refine_latent(z_e, mask, h_d, eps_dir, step_size: float = 1.0, grad=None):
    """One refinement update z - step * grad + h_d.

    ``grad`` defaults to the detached gradient eps_dir * mask.
    """
    z_e = np.asarray(z_e, dtype=np.float64)
    eps_dir = np.asarray(eps_dir, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    h_d = np.asarray(h_d, dtype=np.float64)
    if eps_dir.shape != z_e.shape:
        raise ShapeError(f"shape mismatch: {z_e.shape} vs {eps_dir.shape}")
    if mask.shape != z_e.shape[-2:] or h_d.shape != z_e.shape[-2:]:
        raise ShapeError(f"mask {mask.shape} / h_d {h_d.shape} do not match latent grid {z_e.shape[-2:]}")
    if grad is None:
        grad = eps_dir * mask
    return z_e - step_size * grad + h_d


def finite_difference_gradient(f: Callable[[np.ndarray], float], z, h: float = 1e-6):
    """Central-difference gradient of a scalar function, one cell at a time."""
    z = np.array(z, dtype=np.float64)
    grad = np.empty_like(z)
    flat, g = z.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f(z)
        flat[i] = orig - h
        down = f(z)
        flat[i] = orig
        g[i] = (up - down) / (2 * h)
    return grad


def refinement_loop(z_e, eps_s, a_s, predict_edit, mask, state: EntropyState,
                    cfg: RefinementConfig, sched: NoiseSchedule, t: int, *,
                    clamp: float = DEFAULT_CLAMP, normalize_entropy: bool = False,
                    predict_eps=None) -> RefinementResult:
    """Run ``cfg.n_o`` refinement iterations of the editing latent at step ``t``.

    ``predict_edit(z)`` returns the editing branch's (eps_e, a_e) for latent z.
    Each iteration re-queries it, rebuilds the dual entropies against the fixed
    reconstruction attention ``a_s``, recomputes the divergence against the
    cached t+1 entropies in ``state`` (unless ``cfg.static_divergence``), forms
    the direction noise and applies one update.

    With ``detach_direction=False`` the gradient is taken by finite differences
    through ``predict_eps`` (defaults to ``predict_edit(z)[0]``), so it includes
    the dependence of eps_e on z.
    """
    z = np.array(z_e, dtype=np.float64)
    step = cfg.step_at(sched, t)
    h_d_static = None
    eps_e = a_e = h_e = h_s = h_d = None
    losses = []
    for i in range(1, cfg.n_o + 1):
        eps_e, a_e = predict_edit(z)
        _, h_e, h_s = dual_entropy(a_s, a_e, clamp, normalize_entropy)
        if cfg.static_divergence:
            if h_d_static is None:
                h_d_static = entropy_divergence(h_e, h_s, state)[2]
            h_d = h_d_static
        else:
            h_d = entropy_divergence(h_e, h_s, state)[2]
        eps_dir = direction_noise(eps_e, eps_s, h_d, sched, t)
        losses.append(refinement_loss(eps_dir, z, mask))

        grad = None
        if not cfg.detach_direction:
            eps_fn = predict_eps or (lambda zz: predict_edit(zz)[0])
            h_d_now = h_d

            def loss_of(zz):
                return refinement_loss(direction_noise(eps_fn(zz), eps_s, h_d_now, sched, t), zz, mask)

            grad = finite_difference_gradient(loss_of, z)

        z = refine_latent(z, mask, h_d, eps_dir, step, grad)
        if not np.all(np.isfinite(z)):
            raise NumericDivergenceError(
                f"editing latent became non-finite at refinement iteration {i} (t={t})",
                step=t, iteration=i)
    return RefinementResult(z, h_d, eps_e, a_e, h_e, h_s, cfg.n_o, step, losses)
