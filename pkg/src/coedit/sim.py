"""Analytic stand-in for the diffusion UNet.

Scenes are flat-colored circles and squares on a background. Every object
carries a token id; token 0 is the background. The denoiser knows each
condition's clean image exactly, so its noise prediction is the exact
on-manifold inverse, and its per-token attention maps are blurred region
indicators plus uniform noise whose amplitude shrinks as sampling proceeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from coedit.attention import minmax_normalize
from coedit.errors import ParameterError
from coedit.schedule import NoiseSchedule

BACKGROUND_TOKEN = 0
SHAPES = ("circle", "square")
NEUTRAL_GRAY = 0.5
BRANCH_INDEX = {"source": 0, "target": 1}


@dataclass(frozen=True)
class SceneObject:
    shape: str
    center: tuple
    size: int
    color: tuple
    token_id: int

    def footprint(self, height: int, width: int) -> np.ndarray:
        rows, cols = np.mgrid[0:height, 0:width]
        dr = rows - self.center[0]
        dc = cols - self.center[1]
        if self.shape == "circle":
            return dr * dr + dc * dc <= self.size * self.size
        return (np.abs(dr) <= self.size) & (np.abs(dc) <= self.size)

    def to_dict(self):
        return {"shape": self.shape, "center": list(self.center), "size": self.size,
                "color": list(self.color), "token_id": self.token_id}

    @classmethod
    def from_dict(cls, d):
        return cls(d["shape"], tuple(d["center"]), int(d["size"]), tuple(float(c) for c in d["color"]),
                   int(d["token_id"]))


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    background: tuple
    objects: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        validate_scene(self)

    @property
    def token_ids(self) -> list:
        return [BACKGROUND_TOKEN] + [o.token_id for o in self.objects]

    def to_dict(self):
        return {"height": self.height, "width": self.width, "background": list(self.background),
                "objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["height"]), int(d["width"]), tuple(float(c) for c in d["background"]),
                   tuple(SceneObject.from_dict(o) for o in d.get("objects", [])))


def _check_color(c, what):
    if len(c) != 3 or not all(0.0 <= float(v) <= 1.0 for v in c):
        raise ParameterError(f"{what} must be an RGB triple in [0, 1], got {c!r}")


def validate_scene(spec: SceneSpec):
    if spec.height < 1 or spec.width < 1:
        raise ParameterError(f"grid must be non-empty, got {spec.height}x{spec.width}")
    _check_color(spec.background, "background")
    seen = {BACKGROUND_TOKEN}
    for o in spec.objects:
        if o.shape not in SHAPES:
            raise ParameterError(f"unknown shape {o.shape!r}")
        if o.size < 0:
            raise ParameterError(f"object size must be >= 0, got {o.size}")
        r, c = o.center
        if r - o.size < 0 or c - o.size < 0 or r + o.size >= spec.height or c + o.size >= spec.width:
            raise ParameterError(f"object with token {o.token_id} does not fit in the {spec.height}x{spec.width} grid")
        _check_color(o.color, f"color of token {o.token_id}")
        if o.token_id in seen:
            raise ParameterError(f"duplicate token id {o.token_id}")
        seen.add(o.token_id)


def render_scene(spec: SceneSpec) -> np.ndarray:
    """(3, H, W) image; objects painted in order, later ones on top, hard edges."""
    img = np.empty((3, spec.height, spec.width))
    img[:] = np.asarray(spec.background, dtype=np.float64)[:, None, None]
    for o in spec.objects:
        fp = o.footprint(spec.height, spec.width)
        img[:, fp] = np.asarray(o.color, dtype=np.float64)[:, None]
    return img


def token_region(spec: SceneSpec, token_id: int) -> np.ndarray:
    """Visible cells of a token after occlusion, as a 0/1 float grid."""
    owner = np.full((spec.height, spec.width), BACKGROUND_TOKEN)
    for o in spec.objects:
        owner[o.footprint(spec.height, spec.width)] = o.token_id
    if token_id not in spec.token_ids:
        raise ParameterError(f"token {token_id} not present in scene")
    return (owner == token_id).astype(np.float64)


def box_blur(m, radius: int = 1) -> np.ndarray:
    """Mean over a (2r+1)^2 window, edge-replicated."""
    m = np.asarray(m, dtype=np.float64)
    if radius <= 0:
        return m.copy()
    k = 2 * radius + 1
    padded = np.pad(m, radius, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (k, k))
    return win.mean(axis=(-2, -1))


def edit_region(source: SceneSpec, target: SceneSpec) -> np.ndarray:
    """Cells where the rendered source and target differ."""
    diff = np.any(render_scene(source) != render_scene(target), axis=0)
    return diff.astype(np.float64)


@dataclass
class SimDenoiser:
    """Deterministic toy denoiser bound to named conditions.

    guidance_scale g mimics classifier-free guidance: the prediction is pushed
    away from the one toward a flat gray image by (g - 1) times their gap.
    """

    conditions: dict
    seed: int = 0
    attention_noise_gain: float = 0.5
    attention_blur_radius: int = 1
    guidance_scale: float = 1.0
    _images: dict = field(default_factory=dict, init=False, repr=False)
    _blurred: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.attention_noise_gain < 0:
            raise ParameterError("attention_noise_gain must be >= 0")
        if self.guidance_scale <= 0:
            raise ParameterError("guidance_scale must be positive")
        for name, spec in self.conditions.items():
            self._images[name] = render_scene(spec)
            self._blurred[name] = {tok: box_blur(token_region(spec, tok), self.attention_blur_radius)
                                   for tok in spec.token_ids}

    def _spec(self, condition):
        if condition not in self.conditions:
            raise ParameterError(f"condition {condition!r} is not bound to a scene")
        return self.conditions[condition]

    def predict_eps(self, z_t, condition, t: int, sched: NoiseSchedule):
        self._spec(condition)
        a = sched.alpha(t)
        if a >= 1.0:
            raise ParameterError("noise prediction is undefined at t = 0")
        z_t = np.asarray(z_t, dtype=np.float64)
        x0 = self._images[condition]
        eps = (z_t - np.sqrt(a) * x0) / np.sqrt(1.0 - a)
        if self.guidance_scale != 1.0:
            eps_neutral = (z_t - np.sqrt(a) * NEUTRAL_GRAY) / np.sqrt(1.0 - a)
            eps = eps + (self.guidance_scale - 1.0) * (eps - eps_neutral)
        return eps

    def _rng(self, condition, t):
        branch = BRANCH_INDEX.get(condition)
        if branch is None:
            branch = sum(map(ord, condition)) + 2
        return np.random.default_rng([self.seed, t, branch])

    def raw_attention(self, condition, t: int, sched: NoiseSchedule) -> dict:
        """Per-token maps before normalization: blurred region + eta sqrt(1-a_t) u."""
        spec = self._spec(condition)
        amp = self.attention_noise_gain * np.sqrt(1.0 - sched.alpha(t))
        rng = self._rng(condition, t)
        tokens = sorted(spec.token_ids)
        u = rng.uniform(-1.0, 1.0, size=(len(tokens), spec.height, spec.width))
        return {tok: self._blurred[condition][tok] + amp * u[k] for k, tok in enumerate(tokens)}

    def attention(self, condition, t: int, sched: NoiseSchedule) -> dict:
        return {tok: minmax_normalize(m) for tok, m in self.raw_attention(condition, t, sched).items()}

    def predict(self, z_t, condition, t: int, sched: NoiseSchedule):
        """(eps, {token_id: attention map in [0, 1]})."""
        return self.predict_eps(z_t, condition, t, sched), self.attention(condition, t, sched)


def _random_color(rng, avoid=(), min_gap=0.35):
    for _ in range(1000):
        c = tuple(float(round(v, 3)) for v in rng.uniform(0.05, 0.95, size=3))
        if all(np.abs(np.subtract(c, a)).max() >= min_gap for a in avoid):
            return c
    raise ParameterError("could not draw a distinct color")


def _place(rng, size, grid, taken, margin=2):
    """Random center whose bounding box stays inside the grid and off ``taken`` boxes."""
    for _ in range(1000):
        r = int(rng.integers(size + 1, grid - size - 1))
        c = int(rng.integers(size + 1, grid - size - 1))
        box = (r - size - margin, c - size - margin, r + size + margin, c + size + margin)
        if all(box[2] < b[0] or b[2] < box[0] or box[3] < b[1] or b[3] < box[1] for b in taken):
            taken.append(box)
            return (r, c)
    raise ParameterError(f"could not place an object of size {size} in a {grid}x{grid} grid; "
                         "use a larger grid or fewer distractors")


EDIT_KINDS = ("replace", "recolor", "remove", "inpaint")


def make_edit_fixture(kind: str, seed: int, size: int = 32, n_distractors: int = 1):
    """Procedural source/target scene pair differing only in the edited token(s).

    Returns (EditTask, ground-truth edit mask, ground-truth target image).

    replace  circle -> square of a new color at the same center
    recolor  same shape, new color
    remove   object painted over with the background color
    inpaint  black square hole filled with a new color
    """
    from coedit.pipeline import EditTask

    if kind not in EDIT_KINDS:
        raise ParameterError(f"fixture kind must be one of {EDIT_KINDS}, got {kind!r}")
    rng = np.random.default_rng([seed, EDIT_KINDS.index(kind)])
    bg = _random_color(rng)
    taken = []
    radius = int(rng.integers(max(3, size // 8), max(4, size // 5) + 1))
    center = _place(rng, radius, size, taken)

    distractors = []
    for k in range(n_distractors):
        r = int(rng.integers(2, max(3, size // 10) + 1))
        distractors.append(SceneObject(str(rng.choice(SHAPES)), _place(rng, r, size, taken), r,
                                       _random_color(rng, avoid=[bg]), 10 + k))

    src_color = _random_color(rng, avoid=[bg])
    edit_id = 2
    if kind == "replace":
        src_obj = SceneObject("circle", center, radius, src_color, 1)
        tgt_obj = SceneObject("square", center, radius, _random_color(rng, avoid=[bg, src_color]), edit_id)
    elif kind == "recolor":
        shape = str(rng.choice(SHAPES))
        src_obj = SceneObject(shape, center, radius, src_color, 1)
        tgt_obj = SceneObject(shape, center, radius, _random_color(rng, avoid=[bg, src_color]), edit_id)
    elif kind == "remove":
        shape = str(rng.choice(SHAPES))
        src_obj = SceneObject(shape, center, radius, src_color, 1)
        tgt_obj = SceneObject(shape, center, radius, bg, edit_id)
    else:
        hole = (0.0, 0.0, 0.0)
        src_obj = SceneObject("square", center, radius, hole, 1)
        tgt_obj = SceneObject("square", center, radius, _random_color(rng, avoid=[bg, hole]), edit_id)

    source = SceneSpec(size, size, bg, tuple(distractors) + (src_obj,))
    target = SceneSpec(size, size, bg, tuple(distractors) + (tgt_obj,))
    task = EditTask(source, target, frozenset({edit_id}), seed)
    return task, edit_region(source, target), render_scene(target)
