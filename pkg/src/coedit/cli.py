"""Command-line runner: ``edit``, ``sweep`` and ``eval``.

Task files are strict JSON::

    {
      "schedule": {"T": 12, "alpha_final": 0.02},
      "pipeline": {... PipelineConfig fields except T/alpha_final ...},
      "task": {"fixture": "replace", "seed": 0}          # or
              {"source": {...}, "target": {...}, "edited_token_ids": [2], "seed": 0},
      "outputs": "runs/replace0"
    }

Relative ``outputs`` paths resolve against the task file's directory.
Exit codes: 0 ok, 2 invalid config or input, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from coedit.errors import CoEditError, NumericDivergenceError
from coedit.imageio import read_pnm, write_pgm, write_ppm
from coedit.metrics import edit_metrics, mask_iou
from coedit.pipeline import EditTask, PipelineConfig, run_edit
from coedit.refinement import RefinementConfig
from coedit.sim import EDIT_KINDS, edit_region, make_edit_fixture, render_scene

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3

SIMILARITY_SCALE = ("region_similarity is the pixel cosine mapped to [0, 1]; "
                    "fces uses similarities on that 0-1 scale, PSNR capped at s_p_db")

SWEEP_AXES = ("norm", "n_o", "ownership_mode")

_TOP_KEYS = {"schedule", "pipeline", "task", "outputs"}
_SCHEDULE_KEYS = {"T", "alpha_final"}
_REFINE_KEYS = {f.name for f in dataclasses.fields(RefinementConfig)}
_PIPELINE_KEYS = {f.name for f in dataclasses.fields(PipelineConfig)} - _SCHEDULE_KEYS
_FIXTURE_KEYS = {"fixture", "seed", "size", "n_distractors"}
_SCENE_TASK_KEYS = {"source", "target", "edited_token_ids", "seed"}
_SCENE_KEYS = {"height", "width", "background", "objects"}
_OBJECT_KEYS = {"shape", "center", "size", "color", "token_id"}


class ConfigError(CoEditError):
    pass


def _strict(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where or 'task file'} must be a JSON object")
    for key in d:
        if key not in allowed:
            name = f"{where}.{key}" if where else key
            raise ConfigError(f"unknown key {key!r} at {name!r}")


def _check_scene(d, where):
    _strict(d, _SCENE_KEYS, where)
    for i, o in enumerate(d.get("objects", [])):
        _strict(o, _OBJECT_KEYS, f"{where}.objects[{i}]")


@dataclasses.dataclass
class TaskFile:
    cfg: PipelineConfig
    task: EditTask
    gt_mask: np.ndarray
    target_image: np.ndarray
    outputs: Path
    task_spec: dict
    outputs_raw: str

    def resolved(self) -> dict:
        """Every setting with defaults filled in, as echoed into metrics.json."""
        pipe = self.cfg.to_dict()
        sched = {"T": pipe.pop("T"), "alpha_final": pipe.pop("alpha_final")}
        return {"schedule": sched, "pipeline": pipe, "task": self.task_spec, "outputs": self.outputs_raw}


def build_config(doc: dict) -> PipelineConfig:
    _strict(doc.get("schedule", {}), _SCHEDULE_KEYS, "schedule")
    pipe = dict(doc.get("pipeline", {}))
    _strict(pipe, _PIPELINE_KEYS, "pipeline")
    if "refinement" in pipe:
        _strict(pipe["refinement"], _REFINE_KEYS, "pipeline.refinement")
        pipe["refinement"] = RefinementConfig(**pipe["refinement"])
    return PipelineConfig(**doc.get("schedule", {}), **pipe)


def build_task(spec: dict):
    """(EditTask, gt mask, gt target image, resolved task dict)."""
    if "fixture" in spec:
        _strict(spec, _FIXTURE_KEYS, "task")
        kind = spec["fixture"]
        if kind not in EDIT_KINDS:
            raise ConfigError(f"task.fixture must be one of {EDIT_KINDS}, got {kind!r}")
        resolved = {"fixture": kind, "seed": int(spec.get("seed", 0)),
                    "size": int(spec.get("size", 32)), "n_distractors": int(spec.get("n_distractors", 1))}
        task, gt, tgt = make_edit_fixture(kind, resolved["seed"], resolved["size"], resolved["n_distractors"])
        return task, gt, tgt, resolved
    _strict(spec, _SCENE_TASK_KEYS, "task")
    missing = {"source", "target", "edited_token_ids"} - set(spec)
    if missing:
        raise ConfigError(f"task is missing {sorted(missing)} (or give a 'fixture')")
    _check_scene(spec["source"], "task.source")
    _check_scene(spec["target"], "task.target")
    task = EditTask.from_dict(spec)
    return task, edit_region(task.source, task.target), render_scene(task.target), task.to_dict()


def load_taskfile(path) -> TaskFile:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read task file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    _strict(doc, _TOP_KEYS, "")
    for key in ("task", "outputs"):
        if key not in doc:
            raise ConfigError(f"task file is missing required key {key!r}")
    if not isinstance(doc["outputs"], str):
        raise ConfigError("'outputs' must be a directory path string")
    cfg = build_config(doc)
    task, gt, tgt, spec = build_task(doc["task"])
    out = Path(doc["outputs"])
    if not out.is_absolute():
        out = path.parent / out
    return TaskFile(cfg, task, gt, tgt, out, spec, doc["outputs"])


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def execute(tf: TaskFile, cfg: PipelineConfig | None = None, outdir: Path | None = None) -> dict:
    """Run one edit and write its artifacts; returns the metrics block."""
    cfg = cfg or tf.cfg
    out = outdir or tf.outputs
    out.mkdir(parents=True, exist_ok=True)
    res = run_edit(tf.task, cfg, gt_mask=tf.gt_mask)

    write_ppm(out / "edited.ppm", res.image)
    write_ppm(out / "source.ppm", render_scene(tf.task.source))
    write_ppm(out / "target_gt.ppm", tf.target_image)
    write_pgm(out / "mask_final.pgm", res.final_mask)
    write_pgm(out / "mask_gt.pgm", tf.gt_mask)
    with open(out / "trace.jsonl", "w") as fh:
        for tr in res.traces:
            fh.write(json.dumps(tr.to_dict(), sort_keys=True) + "\n")

    # score the artifacts as written, so `eval` on the files reproduces these numbers
    edited = read_pnm(out / "edited.ppm")
    reference = read_pnm(out / "target_gt.ppm")
    metrics = edit_metrics(edited, reference, tf.gt_mask)
    ious = [tr.iou for tr in res.traces]
    metrics.update({
        "objective": res.objective, "entropy_term": res.entropy_term, "mask_term": res.mask_term,
        "final_mask_iou": mask_iou(res.final_mask, tf.gt_mask),
        "mean_iou_last3": float(np.mean(ious[-3:])),
        "fallback_steps": [tr.t for tr in res.traces if tr.fallback],
    })
    echoed = tf.resolved()
    if cfg is not tf.cfg:
        pipe = cfg.to_dict()
        echoed["schedule"] = {"T": pipe.pop("T"), "alpha_final": pipe.pop("alpha_final")}
        echoed["pipeline"] = pipe
    report = {"similarity_scale": SIMILARITY_SCALE, "config": echoed, "metrics": metrics}
    (out / "metrics.json").write_text(_dump(report))
    return metrics


def cmd_edit(args) -> int:
    tf = load_taskfile(args.taskfile)
    m = execute(tf)
    print(f"wrote {tf.outputs}  fces={m['fces']:.4f} psnr={m['psnr_db']:.2f} "
          f"final_mask_iou={m['final_mask_iou']:.3f}")
    return EXIT_OK


def _sweep_value(axis, raw, base: PipelineConfig) -> PipelineConfig:
    raw = raw.strip()
    if axis == "n_o":
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"n_o value {raw!r} is not an integer") from None
        return dataclasses.replace(base, refinement=dataclasses.replace(base.refinement, n_o=n))
    return dataclasses.replace(base, **{axis: raw.upper()})


def thread_cap() -> int:
    raw = os.environ.get("COEDIT_THREADS")
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"COEDIT_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"COEDIT_THREADS must be a positive integer, got {raw!r}")
    return n


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"--axis must be one of {SWEEP_AXES}, got {args.axis!r}")
    tf = load_taskfile(args.taskfile)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values is empty")
    try:
        cfgs = [_sweep_value(args.axis, v, tf.cfg) for v in values]
    except ValueError as exc:
        raise ConfigError(f"invalid --values for axis {args.axis}: {exc}") from exc

    def job(k):
        start = time.perf_counter()
        try:
            m = execute(tf, cfgs[k], tf.outputs / f"{args.axis}={values[k]}")
            status = "ok"
        except NumericDivergenceError as exc:
            m, status = {}, f"diverged: {exc}"
        m["wall_time_s"] = time.perf_counter() - start
        print(f"{args.axis}={values[k]}: {status}", flush=True)
        return m, status

    with ThreadPoolExecutor(max_workers=min(thread_cap(), len(values))) as pool:
        results = list(pool.map(job, range(len(values))))

    cols = ["psnr_db", "ssim", "cs_r", "cs_i", "fces", "objective", "final_mask_iou", "mean_iou_last3"]
    tf.outputs.mkdir(parents=True, exist_ok=True)
    with open(tf.outputs / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([args.axis, *cols, "wall_time_s", "status"])
        for v, (m, status) in zip(values, results):
            w.writerow([v, *(m.get(c, "") for c in cols), m["wall_time_s"], status])
    return EXIT_DIVERGED if any(s != "ok" for _, s in results) else EXIT_OK


def cmd_eval(args) -> int:
    try:
        edited = read_pnm(args.edited)
        reference = read_pnm(args.reference)
        mask = read_pnm(args.mask, raw=True)
    except OSError as exc:
        raise ConfigError(f"cannot read image: {exc}") from exc
    if edited.ndim != 3 or reference.ndim != 3:
        raise ConfigError("edited and reference must be color (P6) images")
    if mask.ndim != 2:
        raise ConfigError("mask must be a grayscale (P5) image")
    if edited.shape != reference.shape or mask.shape != edited.shape[1:]:
        raise ConfigError(f"size mismatch: edited {edited.shape[1:]}, reference {reference.shape[1:]}, "
                          f"mask {mask.shape}")
    if not np.all((mask == 0) | (mask == 255)):
        raise ConfigError("mask must be binary (pixel values 0 or 255)")
    if args.w_e is not None and not 0.0 <= args.w_e <= 1.0:
        raise ConfigError(f"--w-e must lie in [0, 1], got {args.w_e}")
    metrics = edit_metrics(edited, reference, (mask == 255).astype(np.float64), w_e=args.w_e)
    sys.stdout.write(_dump({"similarity_scale": SIMILARITY_SCALE, "metrics": metrics}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coedit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("edit", help="run one edit from a task file")
    e.add_argument("taskfile")
    e.set_defaults(func=cmd_edit)

    s = sub.add_parser("sweep", help="rerun a task file over values of one config axis")
    s.add_argument("taskfile")
    s.add_argument("--axis", required=True, help="one of: " + ", ".join(SWEEP_AXES))
    s.add_argument("--values", required=True, help="comma-separated values")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("eval", help="score an edited image against a reference")
    v.add_argument("edited")
    v.add_argument("reference")
    v.add_argument("mask")
    v.add_argument("--w-e", type=float, default=None, help="edited-area weight (default: mask fraction)")
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except NumericDivergenceError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CoEditError, ValueError, TypeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
