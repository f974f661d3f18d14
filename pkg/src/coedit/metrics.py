"""Image-quality metrics, the fidelity-constrained editing score and mask curves.

Images are float arrays in [0, 1], either (H, W) or (C, H, W).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from coedit.errors import IncompleteTraceError, ParameterError, ShapeError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0, mask=None) -> float:
    """PSNR in dB, optionally restricted to cells where ``mask`` is set.

    Identical inputs return the 99 dB cap rather than infinity.
    """
    a, b = _pair(a, b)
    if peak <= 0:
        raise ParameterError("peak must be positive")
    sq = (a - b) ** 2
    if mask is not None:
        sel = np.asarray(mask) > 0.5
        if sel.shape != a.shape[-2:]:
            raise ShapeError(f"mask shape {sel.shape} does not match image grid {a.shape[-2:]}")
        if not sel.any():
            raise ParameterError("psnr mask selects no cells")
        sq = sq[..., sel]
    mse = float(np.mean(sq))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img, w):
    win = np.lib.stride_tricks.sliding_window_view(img, w.shape)
    return np.einsum("ijkl,kl->ij", win, w)


def ssim_map(a, b, peak: float = 1.0):
    """Local SSIM over every valid 11x11 window position of a single-channel pair."""
    a, b = _pair(a, b)
    w = gaussian_window()
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a ** 2
    var_b = _filter_valid(b * b, w) - mu_b ** 2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))


def ssim(a, b, peak: float = 1.0) -> float:
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ParameterError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[-2:]}")
    value = float(np.mean([ssim_map(ca, cb, peak).mean() for ca, cb in zip(a, b)]))
    # rounding in the variance terms can push identical windows a hair past 1
    return min(1.0, max(-1.0, value))


def region_similarity(edited, reference, mask=None) -> float:
    """Cosine similarity of the masked pixel vectors, mapped from [-1, 1] to [0, 1].

    Pixel-space stand-in for a CLIP similarity. ``mask=None`` uses the whole image.
    """
    edited, reference = _pair(edited, reference)
    grid = edited.shape[-2:]
    sel = np.ones(grid, dtype=bool) if mask is None else np.asarray(mask) > 0.5
    if sel.shape != grid:
        raise ShapeError(f"mask shape {sel.shape} does not match image grid {grid}")
    if not sel.any():
        raise ParameterError("region mask is empty")
    u = edited[..., sel].ravel()
    v = reference[..., sel].ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        cos = 1.0 if nu == nv else 0.0
    else:
        cos = float(np.clip(u @ v / (nu * nv), -1.0, 1.0))
    return (cos + 1.0) / 2.0


@dataclass(frozen=True)
class FcesInputs:
    cs_r: float
    cs_i: float
    psnr_db: float
    ssim: float
    w_e: float
    w_s: float
    lam: float = 25.0
    s_p_db: float = 40.0

    def __post_init__(self):
        if abs(self.w_e + self.w_s - 1.0) > 1e-9:
            raise ParameterError(f"w_e + w_s must equal 1, got {self.w_e + self.w_s!r}")
        if self.w_e < 0 or self.w_s < 0:
            raise ParameterError("area weights must be non-negative")
        if not (0.0 <= self.cs_r <= 1.0 and 0.0 <= self.cs_i <= 1.0):
            raise ParameterError("similarities must lie in [0, 1]")
        if self.psnr_db < 0:
            raise ParameterError("psnr_db must be non-negative")
        if not -1.0 <= self.ssim <= 1.0:
            raise ParameterError("ssim must lie in [-1, 1]")
        if self.lam <= 0 or self.s_p_db <= 0:
            raise ParameterError("lam and s_p_db must be positive")


def fces(inp: FcesInputs) -> float:
    """lam * (w_e cs_r + w_e cs_i + w_s min(psnr, S_p)/S_p + w_s ssim)."""
    fidelity = min(inp.psnr_db, inp.s_p_db) / inp.s_p_db
    return inp.lam * (inp.w_e * inp.cs_r + inp.w_e * inp.cs_i + inp.w_s * fidelity + inp.w_s * inp.ssim)


def mask_iou(pred, gt) -> float:
    pred = np.asarray(pred) > 0.5
    gt = np.asarray(gt) > 0.5
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def mask_accuracy_curve(traces, gt_mask) -> list:
    """[(t, IoU(M*_t, gt))] in sampling order (t = T down to 1)."""
    gt = np.asarray(gt_mask)
    if not (gt > 0.5).any():
        raise ParameterError("ground-truth mask is empty")
    out = []
    for tr in traces:
        m = getattr(tr, "mask", None)
        if m is None:
            raise IncompleteTraceError(f"trace for t={getattr(tr, 't', '?')} carries no mask")
        out.append((tr.t, mask_iou(m, gt)))
    return sorted(out, key=lambda p: -p[0])


def edit_metrics(edited, reference, gt_mask, lam: float = 25.0, s_p_db: float = 40.0,
                 w_e: float | None = None) -> dict:
    """Full report for one edit against a reference that holds the target content
    inside ``gt_mask`` and the preserved content outside it.

    Fidelity (PSNR/SSIM) is measured on the preserved region with the edited
    region blanked in both images; similarity is measured inside the mask
    (cs_r) and over the whole image (cs_i).
    """
    edited, reference = _pair(edited, reference)
    gt = np.asarray(gt_mask) > 0.5
    if w_e is None:
        w_e = float(gt.mean())
    bg = ~gt
    p = psnr(edited, reference, mask=bg) if bg.any() else PSNR_CAP
    keep = bg.astype(np.float64)
    s = ssim(edited * keep, reference * keep)
    cs_r = region_similarity(edited, reference, gt) if gt.any() else 1.0
    cs_i = region_similarity(edited, reference)
    score = fces(FcesInputs(cs_r, cs_i, p, s, w_e, 1.0 - w_e, lam, s_p_db))
    return {"psnr_db": p, "ssim": s, "cs_r": cs_r, "cs_i": cs_i, "w_e": w_e, "w_s": 1.0 - w_e,
            "lambda": lam, "s_p_db": s_p_db, "fces": score}
