"""Acceptance criteria 1-8, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line (visible under
``pytest -v`` with output capture lifted for that line) and then asserts.
Run this file directly to get just the eight lines.
"""

import functools
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from coedit.attention import (NormKind, background_attention, coopetition_norm, dual_entropy,  # noqa: E402
                              editing_entropy, lorenz_factor, ownership_mask, ownership_threshold,
                              reconstruction_entropy)
from coedit.cli import main as cli_main  # noqa: E402
from coedit.errors import ParameterError  # noqa: E402
from coedit.metrics import FcesInputs, fces, mask_iou, psnr, region_similarity, ssim  # noqa: E402
from coedit.pipeline import (EditTask, OwnershipMode, PipelineConfig, coopetition_objective,  # noqa: E402
                             run_edit)
from coedit.refinement import (EntropyState, RefinementConfig, direction_noise, entropy_divergence,  # noqa: E402
                               finite_difference_gradient, refine_latent, refinement_loss, standardize)
from coedit.schedule import (coedit_final_step, ddcm_reverse, ddim_step, forward_noise,  # noqa: E402
                             make_schedule)
from coedit.sim import EDIT_KINDS, SceneObject, make_edit_fixture, render_scene  # noqa: E402

CASES = 100


def announce(n, ok, detail, elapsed, budget):
    status = "PASS" if ok else "FAIL"
    line = f"criterion {n}: {status}  {detail}  [{elapsed:.2f}s / budget {budget:.0f}s]"
    return line


@pytest.fixture
def say(capsys):
    def _say(line):
        with capsys.disabled():
            print("\n" + line)
    return _say


# -- criterion 1 -------------------------------------------------------------


def _grid(r):
    return int(r.integers(1, 5)), int(r.integers(1, 5))


def _sched(r):
    T = int(r.integers(2, 20))
    s = make_schedule(T, float(r.uniform(0.001, 0.9)))
    t = int(r.integers(1, T + 1))
    return s, t, s.alpha(t), s.alpha(t - 1)


def oracle_suite(seed=0):
    """{operation label: number of mismatching cases out of CASES}."""
    r = np.random.default_rng(seed)
    bad = {}

    def count(label, ok):
        bad[label] = bad.get(label, 0) + (not ok)

    for _ in range(CASES):
        s, t, a_t, a_p = _sched(r)
        g = _grid(r)
        shape = (int(r.integers(1, 4)), *g)
        z = [r.normal(size=shape) for _ in range(6)]
        count("ddim step", oracles.close(ddim_step(z[0], z[1], z[2], s, t), oracles.ddim(z[0], z[1], z[2], a_t, a_p)))
        count("consistency reverse", oracles.close(ddcm_reverse(*z, s, t), oracles.ddcm(*z, a_t, a_p)))

        n = int(r.integers(1, 4))
        he = [r.random(g) for _ in range(n)]
        hs = [r.random(g) for _ in range(n)]
        ms = [(r.random(g) < 0.5).astype(float) for _ in range(n)]
        count("coopetition objective", oracles.close(coopetition_objective(he, hs, ms)[0],
                                                     oracles.objective(he, hs, ms)))

        a_s, a_e = r.random(g), r.random(g)
        bg = background_attention(a_s, a_e)
        count("background attention", oracles.close(bg, oracles.background(a_s, a_e)))
        count("editing entropy", oracles.close(editing_entropy(a_e, bg), oracles.h_edit(a_e, bg)))
        count("reconstruction entropy", oracles.close(reconstruction_entropy(a_e, bg), oracles.h_recon(a_e, bg)))
        kind = list(NormKind)[int(r.integers(0, 4))]
        h1, h2 = r.random(g), r.random(g)
        count("ownership threshold", oracles.close(ownership_threshold(a_e, h1, h2, kind),
                                                   oracles.threshold(a_e, h1, h2, kind.value)))

        hp, sp = r.random(g), r.random(g)
        _, _, hd = entropy_divergence(h1, h2, EntropyState(hp, sp))
        want = np.array([(h1[i] - hp[i]) - (h2[i] - sp[i]) for i in oracles.cells(g)]).reshape(g)
        ee, es = r.normal(size=(3, *g)), r.normal(size=(3, *g))
        ed = direction_noise(ee, es, hd, s, t)
        count("divergence + direction noise", oracles.close(hd, want)
              and oracles.close(ed, oracles.direction(ee, es, want, a_t)))

        m = (r.random(g) < 0.5).astype(float)
        step = float(r.uniform(0.1, 2))
        zz = r.normal(size=(3, *g))
        count("refinement step", oracles.close(refine_latent(zz, m, hd, ed, step), oracles.refine(zz, m, hd, ed, step))
              and oracles.close(refinement_loss(ed, zz, m),
                                sum(ed[i] * zz[i] * m[i[1:]] for i in oracles.cells(zz.shape))))

        eq4 = bool(r.integers(0, 2))
        mask, h = (r.random(g) < 0.5).astype(float), r.normal(size=g)
        got = coedit_final_step(z[0], z[1], z[2], z[3], z[4], mask, h, z[5], s, t, kind, eq4_consistent_scaling=eq4)
        count("final masked step", oracles.close(got, oracles.final_step(z[0], z[1], z[2], z[3], z[4], mask, h, z[5],
                                                                        a_t, a_p, kind.value, eq4)))

        w = float(r.random())
        args = (float(r.random()), float(r.random()), float(r.uniform(0, 80)), float(r.uniform(-1, 1)))
        count("fces", oracles.close(fces(FcesInputs(*args, w, 1 - w)), oracles.fces(*args, w, 1 - w)))

        ch = int(r.integers(1, 4))
        ia, ib = r.random((ch, 11, 12)), r.random((ch, 11, 12))
        want = sum(oracles.ssim_channel(ia[k], ib[k]) for k in range(ch)) / ch
        count("ssim (1e-6)", abs(ssim(ia, ib) - want) <= 1e-6)
        count("psnr", oracles.close(psnr(ia, ib), 10 * math.log10(1 / oracles.mse(ia, ib))))
        rm = r.random(g) < 0.6
        rm[0, 0] = True
        ra, rb = r.random((3, *g)), r.random((3, *g))
        count("region similarity", oracles.close(region_similarity(ra, rb, rm), oracles.cosine01(ra, rb, rm)))
    return bad


def criterion_1():
    bad = oracle_suite()
    failing = {k: v for k, v in bad.items() if v}
    detail = f"{len(bad)} operations x {CASES} cases vs scalar oracles; mismatches: {failing or 'none'}"
    return not failing, detail


# -- criterion 2 -------------------------------------------------------------


def noop_psnr(eta, n_o=8):
    task, _, _ = make_edit_fixture("recolor", 0)
    noop = EditTask(task.source, task.source, {1}, 0)
    res = run_edit(noop, PipelineConfig(refinement=RefinementConfig(n_o=n_o), attention_noise_gain=eta))
    return psnr(res.image, res.reconstruction)


def criterion_2():
    r = np.random.default_rng(2)
    s = make_schedule(12, 0.02)
    worst = 0.0
    for t in range(1, 13):
        x, e, e2, z0, zz, ee = (r.normal(size=(3, 4, 4)) for _ in range(6))
        worst = max(worst, np.abs(ddim_step(forward_noise(x, e, s, t), e, e2, s, t) - forward_noise(x, e2, s, t - 1)).max())
        worst = max(worst, np.abs(ddcm_reverse(z0, zz, zz, ee, ee, np.zeros_like(z0), s, t)
                                  - np.sqrt(s.alpha(t - 1)) * z0).max())
        worst = max(worst, np.abs(refine_latent(zz, np.zeros((4, 4)), np.zeros((4, 4)), ee) - zz).max())
    p0 = noop_psnr(0.0)
    p_noisy = noop_psnr(0.5)
    ok = worst <= 1e-10 and p0 >= 40.0
    detail = (f"algebraic max error {worst:.1e} (tol 1e-10); no-op edit PSNR {p0:.1f} dB at eta=0 (need >= 40)"
              f" [info: {p_noisy:.1f} dB at eta=0.5]")
    return ok, detail


# -- criterion 3 -------------------------------------------------------------


def criterion_3():
    worst = 0.0
    for seed in range(50):
        r = np.random.default_rng(1000 + seed)
        g = _grid(r)
        s, t, _, _ = _sched(r)
        ee, es, z = (r.normal(size=(3, *g)) for _ in range(3))
        ed = direction_noise(ee, es, r.normal(size=g), s, t)
        m = (r.random(g) < 0.5).astype(float)
        fd = finite_difference_gradient(lambda zz: refinement_loss(ed, zz, m), z)
        an = ed * m
        worst = max(worst, float(np.max(np.abs(fd - an)) / max(1.0, np.max(np.abs(an)))))
    return worst <= 1e-4, f"max relative FD-vs-analytic gap {worst:.2e} over 50 fixtures (tol 1e-4)"


# -- criteria 4 and 5 --------------------------------------------------------

BENCH = dict(T=12, alpha_final=0.02, attention_noise_gain=0.5)


def fixtures():
    return [(kind, seed, *make_edit_fixture(kind, seed, size=32)) for kind in EDIT_KINDS for seed in range(5)]


@functools.lru_cache(maxsize=None)
def bench(variant):
    kw = dict(BENCH, refinement=RefinementConfig(n_o=8))
    if variant == "hard":
        kw["ownership_mode"] = OwnershipMode.HARD
    elif variant == "no_temporal":
        kw["temporal"] = False
    cfg = PipelineConfig(**kw)
    out = []
    for kind, seed, task, gt, _ in fixtures():
        res = run_edit(task, cfg, gt_mask=gt)
        bg = gt < 0.5
        out.append({"kind": kind, "ious": [tr.iou for tr in res.traces],
                    "bg_psnr": psnr(res.image, render_scene(task.source), mask=bg)})
    return out


def criterion_4():
    coop, hard = bench("full"), bench("hard")
    last3 = lambda runs: float(np.mean([np.mean(r["ious"][-3:]) for r in runs]))  # noqa: E731
    c3, h3 = last3(coop), last3(hard)
    first = float(np.mean([r["ious"][0] for r in coop]))
    final = float(np.mean([r["ious"][-1] for r in coop]))
    ok = c3 - h3 >= 0.05 and final > first
    detail = (f"final-3 mean IoU coopetitive {c3:.3f} vs hard {h3:.3f} (gap {c3 - h3:+.3f}, need >= 0.05); "
              f"coopetitive IoU first step {first:.3f} -> final step {final:.3f}")
    return ok, detail


def criterion_5():
    full, no_t, hard = bench("full"), bench("no_temporal"), bench("hard")
    p_full = float(np.mean([r["bg_psnr"] for r in full]))
    p_not = float(np.mean([r["bg_psnr"] for r in no_t]))
    i_full = float(np.mean([r["ious"][-1] for r in full]))
    i_hard = float(np.mean([r["ious"][-1] for r in hard]))
    temporal_ok = p_not < p_full
    spatial_ok = i_hard < i_full
    detail = (f"temporal ablation: background PSNR full {p_full:.2f} dB vs no-temporal {p_not:.2f} dB "
              f"({'ok' if temporal_ok else 'direction NOT reproduced'}); "
              f"spatial ablation: final-mask IoU full {i_full:.3f} vs hard {i_hard:.3f} "
              f"({'ok' if spatial_ok else 'direction NOT reproduced'})")
    return temporal_ok and spatial_ok, detail


# -- criterion 6 -------------------------------------------------------------


def criterion_6():
    r = np.random.default_rng(6)
    mono_bad = 0
    limits = [1.0, 1.0, 40.0, 1.0]
    for _ in range(1000):
        w = float(r.random())
        base = [float(r.random()), float(r.random()), float(r.uniform(0, 40)), float(r.uniform(-1, 1))]
        lam = float(r.uniform(0.1, 50))
        v0 = fces(FcesInputs(*base, w, 1 - w, lam))
        for k in range(4):
            hi = list(base)
            hi[k] = base[k] + float(r.random()) * (limits[k] - base[k])
            mono_bad += fces(FcesInputs(*hi, w, 1 - w, lam)) < v0 - 1e-12
    sym_bad = 0
    for _ in range(20):
        a, b = r.random((3, 12, 12)), r.random((3, 12, 12))
        sym_bad += psnr(a, b) != psnr(b, a) or abs(ssim(a, b) - ssim(b, a)) > 1e-12
    iou_bad = 0
    for _ in range(200):
        g = _grid(r)
        m1, m2 = r.random(g) < 0.5, r.random(g) < 0.5
        v = mask_iou(m1, m2)
        iou_bad += not (0 <= v <= 1) or (m1.any() and mask_iou(m1, m1) != 1.0)
    rejected = 0
    for w_e, w_s in [(0.6, 0.6), (0.5, 0.5 + 1e-8), (1.0, 0.1), (0.0, 0.0)]:
        try:
            FcesInputs(0.5, 0.5, 20.0, 0.5, w_e, w_s)
        except ParameterError:
            rejected += 1
    ok = mono_bad == 0 and sym_bad == 0 and iou_bad == 0 and rejected == 4
    detail = (f"monotonicity violations {mono_bad}/4000, symmetry violations {sym_bad}/20, "
              f"IoU bound violations {iou_bad}/200, bad weight sums rejected {rejected}/4")
    return ok, detail


# -- criterion 7 -------------------------------------------------------------


def criterion_7(tmp):
    doc = {"schedule": {"T": 12, "alpha_final": 0.02}, "pipeline": {"refinement": {"n_o": 8}},
           "task": {"fixture": "replace", "seed": 7}, "outputs": "out"}
    blobs = []
    for run in ("a", "b"):
        d = Path(tmp) / run
        d.mkdir()
        (d / "task.json").write_text(json.dumps(doc))
        code = cli_main(["edit", str(d / "task.json")])
        if code != 0:
            return False, f"edit exited {code}"
        blobs.append(((d / "out" / "metrics.json").read_bytes(), (d / "out" / "trace.jsonl").read_bytes()))
    ok = blobs[0] == blobs[1]
    return ok, f"metrics.json identical: {blobs[0][0] == blobs[1][0]}, trace.jsonl identical: {blobs[0][1] == blobs[1][1]}"


# -- criterion 8 -------------------------------------------------------------


def criterion_8():
    r = np.random.default_rng(8)
    fails = {}

    def check(name, ok):
        fails[name] = fails.get(name, 0) + (not ok)

    for _ in range(300):
        g = (int(r.integers(1, 7)), int(r.integers(1, 7)))
        a_s, a_e = r.random(g), r.random(g)
        _, he, hs = dual_entropy(a_s, a_e)
        check("entropy nonnegative", bool(np.all(he >= 0) and np.all(hs >= 0) and np.all(he * hs >= 0)))
        p = a_e.size
        lf = lorenz_factor(a_e)
        check("lorenz bounds", -1e-12 <= lf <= (p - 1) / (2 * p) + 1e-12)
        c = float(10 ** r.uniform(-3, 3))
        check("lorenz scale invariance", abs(lorenz_factor(c * a_e) - lf) <= 1e-9 * max(lf, 1e-3))
        t1, t2 = sorted(r.random(2))
        check("mask nesting", bool(np.all(ownership_mask(a_e, t1) >= ownership_mask(a_e, t2))))
        perm = r.permutation(p)
        pm = lambda m: m.ravel()[perm].reshape(g)  # noqa: E731
        check("threshold permutation invariance",
              abs(ownership_threshold(pm(a_e), pm(he), pm(hs)) - ownership_threshold(a_e, he, hs)) <= 1e-12)
        m = r.normal(size=g) * r.uniform(0.1, 10)
        zm = standardize(m)
        check("standardize moments", m.std() < 1e-6 or (abs(zm.mean()) <= 1e-9 and abs(zm.std() - 1) <= 1e-9))
    one_hot = np.zeros((4, 4))
    one_hot[1, 2] = 0.7
    check("lorenz bounds", lorenz_factor(one_hot) == 0.0)
    check("entropy disjoint support", _disjoint_product() < _same_product())

    task, _, _ = make_edit_fixture("replace", 0)
    cfg = PipelineConfig(refinement=RefinementConfig(n_o=4))
    alt_obj = SceneObject("circle", task.target.objects[-1].center, 3, (0.05, 0.95, 0.5), 2)
    alt = EditTask(task.source, type(task.target)(32, 32, task.target.background,
                                                  task.target.objects[:-1] + (alt_obj,)), {2}, task.seed)
    a, b = run_edit(task, cfg), run_edit(alt, cfg)
    check("branch isolation", [t.zs_digest for t in a.traces] == [t.zs_digest for t in b.traces])
    check("thresholds in [0, 1]", all(0 <= t.threshold <= 1 for t in a.traces + b.traces))

    bad = {k: v for k, v in fails.items() if v}
    return not bad, f"{len(fails)} invariant families checked; violations: {bad or 'none'}"


def _band(rows):
    m = np.zeros((6, 6))
    m[rows] = 0.8
    return m


def _disjoint_product():
    a_e = _band(slice(0, 3))
    a_bg = _band(slice(3, 6))
    return float(np.sum(np.abs(editing_entropy(a_e, a_bg) * reconstruction_entropy(a_e, a_bg))))


def _same_product():
    a_e = _band(slice(0, 3))
    return float(np.sum(np.abs(editing_entropy(a_e, a_e) * reconstruction_entropy(a_e, a_e))))


# -- pytest entry points ------------------------------------------------------

BUDGETS = {1: 10, 2: 5, 3: 5, 4: 60, 5: 120, 6: 5, 7: 20, 8: 30}


def _run(n, fn, *args):
    start = time.perf_counter()
    ok, detail = fn(*args)
    elapsed = time.perf_counter() - start
    within = elapsed < BUDGETS[n]
    if not within:
        detail += f"; runtime over budget"
    return ok and within, announce(n, ok and within, detail, elapsed, BUDGETS[n])


def test_criterion_1_scalar_oracles(say):
    ok, line = _run(1, criterion_1)
    say(line)
    assert ok, line


def test_criterion_2_manifold_identities(say):
    ok, line = _run(2, criterion_2)
    say(line)
    assert ok, line


def test_criterion_3_gradient_check(say):
    ok, line = _run(3, criterion_3)
    say(line)
    assert ok, line


def test_criterion_4_mask_accuracy(say):
    ok, line = _run(4, criterion_4)
    say(line)
    assert ok, line


def test_criterion_5_ablation_directions(say):
    ok, line = _run(5, criterion_5)
    say(line)
    assert ok, line


def test_criterion_6_metric_invariants(say):
    ok, line = _run(6, criterion_6)
    say(line)
    assert ok, line


def test_criterion_7_cli_determinism(say, tmp_path):
    ok, line = _run(7, criterion_7, tmp_path)
    say(line)
    assert ok, line


def test_criterion_8_invariant_suites(say):
    ok, line = _run(8, criterion_8)
    say(line)
    assert ok, line


if __name__ == "__main__":
    import tempfile

    all_ok = True
    for n, fn in [(1, criterion_1), (2, criterion_2), (3, criterion_3), (4, criterion_4), (5, criterion_5),
                  (6, criterion_6), (8, criterion_8)]:
        ok, line = _run(n, fn)
        print(line, flush=True)
        all_ok &= ok
    with tempfile.TemporaryDirectory() as d:
        ok, line = _run(7, criterion_7, d)
    print(line)
    sys.exit(0 if all_ok and ok else 1)
