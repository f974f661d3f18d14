"""Per-step mask IoU against ground truth for the three ownership modes.

Averages over 5 fixtures per edit kind (32x32, T=12, n_o=8, eta=0.5) and
prints one row per sampling step; --csv also writes the table.
"""

import argparse
import csv

import numpy as np

from coedit.pipeline import OwnershipMode, PipelineConfig, run_edit
from coedit.refinement import RefinementConfig
from coedit.sim import EDIT_KINDS, make_edit_fixture


def curves(n_seeds, n_o, eta, T):
    out = {}
    for mode in OwnershipMode:
        cfg = PipelineConfig(T=T, ownership_mode=mode, attention_noise_gain=eta,
                             refinement=RefinementConfig(n_o=n_o))
        rows = []
        for kind in EDIT_KINDS:
            for seed in range(n_seeds):
                task, gt, _ = make_edit_fixture(kind, seed)
                rows.append([tr.iou for tr in run_edit(task, cfg, gt_mask=gt).traces])
        out[mode.value] = np.mean(rows, axis=0)
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--n-o", type=int, default=8)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--T", type=int, default=12)
    p.add_argument("--csv")
    args = p.parse_args()

    res = curves(args.seeds, args.n_o, args.eta, args.T)
    modes = list(res)
    print("t    " + "  ".join(f"{m:>12}" for m in modes))
    for k, t in enumerate(range(args.T, 0, -1)):
        print(f"{t:<4} " + "  ".join(f"{res[m][k]:12.3f}" for m in modes))
    print("last3" + "  ".join(f"{res[m][-3:].mean():12.3f}" for m in modes))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *modes])
            for k, t in enumerate(range(args.T, 0, -1)):
                w.writerow([t, *(res[m][k] for m in modes)])


if __name__ == "__main__":
    main()
