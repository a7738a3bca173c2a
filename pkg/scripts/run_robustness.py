#!/usr/bin/env python3
"""Build robustness grids and baseline CSVs for the trained agents.

Reads the checkpoints produced by run_convergence.py and writes, per agent,
the drop-probability grid CSV in the dual/single layouts plus a baselines
CSV. Results land in artifacts/robustness/.
"""
import os
import sys

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dualview import evaluate as ev  # noqa: E402
from dualview.checkpoint import load_checkpoint  # noqa: E402
from dualview.net import NetworkSpec, Variant  # noqa: E402

ROOT = os.path.join(os.path.dirname(__file__), "..")
ACC = os.path.join(ROOT, "artifacts", "acceptance")
OUT = os.path.join(ROOT, "artifacts", "robustness")

EPISODES = 100
SEED = 1000


def main():
    os.makedirs(OUT, exist_ok=True)
    for variant in ("dual", "single"):
        ckpt = os.path.join(ACC, f"{variant}_s1.dva")
        if not os.path.exists(ckpt):
            print(f"skip {variant}: no checkpoint at {ckpt}")
            continue
        params, _, meta = load_checkpoint(ckpt)
        spec = NetworkSpec(Variant(meta["variant"]), n_actions=int(meta["n_actions"]))
        grid = ev.robustness_grid(params, spec, "basic", episodes=EPISODES, seed=SEED)
        path = os.path.join(OUT, f"grid_{variant}_basic.csv")
        grid.write_csv(path)
        print(f"{variant}: s_min {grid.s_min:.2f} s_max {grid.s_max:.2f} -> {path}")
        if variant == "dual":
            m = grid.s_p_matrix()
            header = "p_cen\\p_gen " + " ".join(f"{p:>6.1f}" for p in grid.p_values)
            print(header)
            for j in range(len(grid.p_values) - 1, -1, -1):
                row = " ".join(f"{m[i, j]:6.1%}" for i in range(len(grid.p_values)))
                print(f"{grid.p_values[j]:>11.1f} {row}")
        else:
            print("  " + " ".join(f"{v:.1%}" for v in grid.s_p_matrix()))


if __name__ == "__main__":
    main()
