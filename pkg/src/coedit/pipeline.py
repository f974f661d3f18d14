"""Dual-branch editing loop: branch prediction, ownership masking, latent
replacement, entropic refinement and the masked consistency step."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from coedit.attention import (DEFAULT_CLAMP, HARD_THRESHOLD, NormKind, coopetition_norm, dual_entropy,
                              hard_threshold_mask, minmax_normalize, ownership_mask, ownership_threshold)
from coedit.errors import (DegenerateAttentionError, DenoiserError, IncompleteTraceError,
                           NumericDivergenceError, ParameterError, ShapeError)
from coedit.refinement import EntropyState, RefinementConfig, refinement_loop
from coedit.schedule import NoiseSchedule, coedit_final_step, ddim_step, forward_noise, make_schedule
from coedit.sim import SceneSpec, SimDenoiser, render_scene

SOURCE, TARGET = "source", "target"
FINAL_EPS = ("loop", "refined", "replaced")


class OwnershipMode(str, enum.Enum):
    COOPETITIVE = "COOPETITIVE"
    HARD = "HARD"
    # entropy threshold for the first half of the steps, fixed cutoff afterwards
    DDCM_STYLE = "DDCM_STYLE"


@dataclass(frozen=True)
class EditTask:
    source: SceneSpec
    target: SceneSpec
    edited_token_ids: frozenset
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "edited_token_ids", frozenset(int(i) for i in self.edited_token_ids))
        if not self.edited_token_ids:
            raise ParameterError("edited_token_ids must be non-empty")
        missing = self.edited_token_ids - set(self.target.token_ids)
        if missing:
            raise ParameterError(f"edited tokens {sorted(missing)} are not in the target condition")
        if (self.source.height, self.source.width) != (self.target.height, self.target.width):
            raise ShapeError("source and target scenes must share a grid size")

    @property
    def preserved_token_ids(self) -> list:
        """Source tokens that survive unchanged into the target."""
        keep = set(self.target.token_ids) - self.edited_token_ids
        return [tok for tok in self.source.token_ids if tok in keep]

    def to_dict(self):
        return {"source": self.source.to_dict(), "target": self.target.to_dict(),
                "edited_token_ids": sorted(self.edited_token_ids), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(SceneSpec.from_dict(d["source"]), SceneSpec.from_dict(d["target"]),
                   frozenset(d["edited_token_ids"]), int(d.get("seed", 0)))


@dataclass(frozen=True)
class PipelineConfig:
    T: int = 12
    alpha_final: float = 0.02
    norm: NormKind = NormKind.L2_RMS
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    ownership_mode: OwnershipMode = OwnershipMode.COOPETITIVE
    hard_threshold: float = HARD_THRESHOLD
    eq4_consistent_scaling: bool = False
    eps_sign: float = -1.0
    clamp: float = DEFAULT_CLAMP
    normalize_entropy: bool = True
    temporal: bool = True
    # which editing-branch prediction enters the final step: the last one made
    # inside the refinement loop, one at the refined latent, or one at the
    # replaced latent before refinement
    final_eps: str = "loop"
    # toy denoiser knobs
    attention_noise_gain: float = 0.5
    attention_blur_radius: int = 1
    guidance_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "norm", NormKind(self.norm))
        object.__setattr__(self, "ownership_mode", OwnershipMode(self.ownership_mode))
        if isinstance(self.refinement, dict):
            object.__setattr__(self, "refinement", RefinementConfig(**self.refinement))
        if isinstance(self.T, bool) or not isinstance(self.T, (int, np.integer)) or self.T < 2:
            raise ParameterError(f"T must be an integer >= 2, got {self.T!r}")
        if not 0.0 < self.alpha_final < 1.0:
            raise ParameterError(f"alpha_final must lie in (0, 1), got {self.alpha_final!r}")
        if not 0.0 <= self.hard_threshold <= 1.0:
            raise ParameterError(f"hard_threshold must lie in [0, 1], got {self.hard_threshold!r}")
        if self.eps_sign not in (1.0, -1.0):
            raise ParameterError(f"eps_sign must be +1 or -1, got {self.eps_sign!r}")
        if self.final_eps not in FINAL_EPS:
            raise ParameterError(f"final_eps must be one of {FINAL_EPS}, got {self.final_eps!r}")
        if not 0.0 < self.clamp < 0.5:
            raise ParameterError(f"clamp must lie in (0, 0.5), got {self.clamp!r}")

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.T, self.alpha_final)

    def to_dict(self):
        d = asdict(self)
        d["norm"] = self.norm.value
        d["ownership_mode"] = self.ownership_mode.value
        return d


@dataclass
class StepTrace:
    t: int
    threshold: float
    mask: np.ndarray
    h_e_norm: float
    h_s_norm: float
    h_d_norm: float
    entropy_term: float
    mask_term: float = 0.0
    iou: float | None = None
    fallback: bool = False
    zs_digest: str = ""

    @property
    def objective(self) -> float:
        return self.entropy_term + self.mask_term

    def to_dict(self):
        return {"t": self.t, "threshold": self.threshold, "h_e_norm": self.h_e_norm,
                "h_s_norm": self.h_s_norm, "h_d_norm": self.h_d_norm,
                "entropy_term": self.entropy_term, "mask_term": self.mask_term,
                "objective": self.objective, "iou": self.iou, "fallback": self.fallback,
                "zs_digest": self.zs_digest, "mask": self.mask.astype(int).tolist()}


@dataclass
class EditResult:
    image: np.ndarray
    reconstruction: np.ndarray
    traces: list
    objective: float
    entropy_term: float
    mask_term: float
    final_mask: np.ndarray
    z_e: np.ndarray
    z_s: np.ndarray
    masks: list = field(default_factory=list)
    h_e_maps: list = field(default_factory=list)
    h_s_maps: list = field(default_factory=list)


def _aggregate(maps: dict, tokens) -> np.ndarray:
    tokens = list(tokens)
    if not tokens:
        shape = next(iter(maps.values())).shape
        return np.zeros(shape)
    return minmax_normalize(np.mean([maps[tok] for tok in tokens], axis=0))


def _query(denoiser, z, condition, t, sched):
    try:
        return denoiser.predict(z, condition, t, sched)
    except Exception as exc:
        raise DenoiserError(f"{condition} branch: denoiser failed at t={t}: {exc}", branch=condition) from exc


def denoise_branches(denoiser, z_s, z_e, task: EditTask, t: int, sched: NoiseSchedule):
    """Independent predictions for both branches with aggregated, [0, 1]-normalized attention.

    The reconstruction map averages the source tokens preserved in the target;
    the editing map averages the edited target tokens.
    """
    eps_s, maps_s = _query(denoiser, z_s, SOURCE, t, sched)
    eps_e, maps_e = _query(denoiser, z_e, TARGET, t, sched)
    a_s = _aggregate(maps_s, task.preserved_token_ids)
    a_e = _aggregate(maps_e, sorted(task.edited_token_ids))
    return eps_s, a_s, eps_e, a_e


def latent_replacement(z_e, z_s, mask):
    z_e = np.asarray(z_e, dtype=np.float64)
    z_s = np.asarray(z_s, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if z_e.shape != z_s.shape:
        raise ShapeError(f"shape mismatch: {z_e.shape} vs {z_s.shape}")
    if mask.shape != z_e.shape[-2:]:
        raise ShapeError(f"mask shape {mask.shape} does not match latent grid {z_e.shape[-2:]}")
    return mask * z_e + (1.0 - mask) * z_s


def coopetition_objective(h_e_maps, h_s_maps, masks, final_mask=None):
    """Sum over steps of sum|h_e * h_s| plus the Hamming distance of each mask to the final one.

    Returns (total, entropy_term, mask_term). Diagnostic only.
    """
    h_e_maps, h_s_maps, masks = list(h_e_maps), list(h_s_maps), list(masks)
    if not masks or not (len(h_e_maps) == len(h_s_maps) == len(masks)):
        raise IncompleteTraceError(
            f"need one entropy pair and mask per step, got {len(h_e_maps)}/{len(h_s_maps)}/{len(masks)}")
    if any(m is None for m in h_e_maps + h_s_maps + masks):
        raise IncompleteTraceError("trace has missing entries")
    final = masks[-1] if final_mask is None else final_mask
    ent = float(sum(np.sum(np.abs(np.asarray(a) * np.asarray(b))) for a, b in zip(h_e_maps, h_s_maps)))
    ham = float(sum(np.sum(np.abs(np.asarray(m) - final)) for m in masks))
    return ent + ham, ent, ham


def iou(pred, gt) -> float:
    pred = np.asarray(pred) > 0.5
    gt = np.asarray(gt) > 0.5
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def _digest(a) -> str:
    return hashlib.sha1(np.ascontiguousarray(a, dtype=np.float64).tobytes()).hexdigest()[:16]


def noise_rng(seed: int, t: int) -> np.random.Generator:
    """Generator for the shared sampling noise at step t; t = 0 keys the initial z_T draw."""
    return np.random.default_rng([int(seed), int(t)])


def make_denoiser(task: EditTask, cfg: PipelineConfig) -> SimDenoiser:
    return SimDenoiser({SOURCE: task.source, TARGET: task.target}, seed=task.seed,
                       attention_noise_gain=cfg.attention_noise_gain,
                       attention_blur_radius=cfg.attention_blur_radius,
                       guidance_scale=cfg.guidance_scale)


def _predict_eps(denoiser, z, condition, t, sched):
    if hasattr(denoiser, "predict_eps"):
        try:
            return denoiser.predict_eps(z, condition, t, sched)
        except Exception as exc:
            raise DenoiserError(f"{condition} branch: denoiser failed at t={t}: {exc}",
                                branch=condition) from exc
    return _query(denoiser, z, condition, t, sched)[0]


def _ownership(a_e, h_e, h_s, cfg: PipelineConfig, t: int):
    use_entropy = cfg.ownership_mode is OwnershipMode.COOPETITIVE or (
        cfg.ownership_mode is OwnershipMode.DDCM_STYLE and t > cfg.T // 2)
    if use_entropy:
        try:
            thr = ownership_threshold(a_e, h_e, h_s, cfg.norm)
            return thr, ownership_mask(a_e, thr), False
        except DegenerateAttentionError:
            return cfg.hard_threshold, hard_threshold_mask(a_e, cfg.hard_threshold), True
    return cfg.hard_threshold, hard_threshold_mask(a_e, cfg.hard_threshold), False


def decode(z) -> np.ndarray:
    return np.clip(z, 0.0, 1.0)


def run_edit(task: EditTask, cfg: PipelineConfig | None = None, denoiser=None, gt_mask=None) -> EditResult:
    """Edit ``task.source`` toward ``task.target``; deterministic given (task, cfg)."""
    cfg = cfg or PipelineConfig()
    sched = cfg.schedule()
    denoiser = denoiser if denoiser is not None else make_denoiser(task, cfg)

    z0 = render_scene(task.source)
    grid = z0.shape[-2:]
    z_T = forward_noise(z0, noise_rng(task.seed, 0).standard_normal(z0.shape), sched, sched.T)
    z_s = z_T.copy()
    z_e = z_T.copy()
    state = EntropyState.zeros(grid)
    traces, h_e_hist, h_s_hist, masks = [], [], [], []

    for t in range(sched.T, 0, -1):
        eps_s, a_s, eps_e, a_e = denoise_branches(denoiser, z_s, z_e, task, t, sched)
        _, h_e, h_s = dual_entropy(a_s, a_e, cfg.clamp, cfg.normalize_entropy)
        thr, mask, fallback = _ownership(a_e, h_e, h_s, cfg, t)
        h_e_hist.append(h_e)
        h_s_hist.append(h_s)
        masks.append(mask)

        z_e = latent_replacement(z_e, z_s, mask)
        eps_e_replaced = None
        if cfg.final_eps == "replaced" or not cfg.temporal:
            eps_e_replaced = _predict_eps(denoiser, z_e, TARGET, t, sched)
        eps_e_loop = eps_e_replaced

        if cfg.temporal:
            def predict_edit(z, t=t):
                eps, maps = _query(denoiser, z, TARGET, t, sched)
                return eps, _aggregate(maps, sorted(task.edited_token_ids))

            res = refinement_loop(z_e, eps_s, a_s, predict_edit, mask, state, cfg.refinement, sched, t,
                                  clamp=cfg.clamp, normalize_entropy=cfg.normalize_entropy,
                                  predict_eps=lambda z, t=t: _predict_eps(denoiser, z, TARGET, t, sched))
            z_e, h_d = res.z_e, res.h_d
            eps_e_loop = res.eps_e
            state = EntropyState(res.h_e, res.h_s)
        else:
            h_d = np.zeros(grid)
            state = EntropyState(h_e, h_s)

        if cfg.final_eps == "refined":
            eps_e = _predict_eps(denoiser, z_e, TARGET, t, sched)
        else:
            eps_e = eps_e_loop if cfg.final_eps == "loop" else eps_e_replaced
        eps_noise = noise_rng(task.seed, t).standard_normal(z0.shape)
        z_e_next = coedit_final_step(z0, z_e, z_s, eps_e, eps_s, mask, h_d, eps_noise, sched, t, cfg.norm,
                                     eq4_consistent_scaling=cfg.eq4_consistent_scaling, eps_sign=cfg.eps_sign)
        z_s_next = ddim_step(z_s, eps_s, eps_noise, sched, t)
        if not np.all(np.isfinite(z_e_next)):
            raise NumericDivergenceError(f"editing latent became non-finite at step t={t}", step=t)

        traces.append(StepTrace(
            t=t, threshold=float(thr), mask=mask,
            h_e_norm=coopetition_norm(h_e, cfg.norm), h_s_norm=coopetition_norm(h_s, cfg.norm),
            h_d_norm=coopetition_norm(h_d, cfg.norm),
            entropy_term=float(np.sum(np.abs(h_e * h_s))),
            iou=None if gt_mask is None else iou(mask, gt_mask),
            fallback=fallback, zs_digest=_digest(z_s)))
        z_e, z_s = z_e_next, z_s_next

    total, ent, ham = coopetition_objective(h_e_hist, h_s_hist, masks)
    for tr, m in zip(traces, masks):
        tr.mask_term = float(np.sum(np.abs(m - masks[-1])))
    return EditResult(decode(z_e), decode(z_s), traces, total, ent, ham, masks[-1], z_e, z_s,
                      masks, h_e_hist, h_s_hist)
