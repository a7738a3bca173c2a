#!/usr/bin/env python3
"""Train the convergence-comparison agents on the basic shooting scenario.

Produces artifacts/acceptance/<variant>_s<seed>.dva checkpoints and matching
episode logs: dual and single views for seeds 1-3, generic-only for seed 1.
Existing checkpoints are skipped, so the script is resumable. The acceptance
test suite reuses these artifacts instead of retraining.

All agents train with a light per-view drop rate (p=0.1): without it the
optimizer parks the whole shoot trigger in a single view and the agents show
no single-view-failure robustness to measure.
"""
import os
import sys
import time

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dualview.preprocess import DropConfig  # noqa: E402
from dualview.trainer import TrainConfig, load_log, train  # noqa: E402

ART = os.path.join(os.path.dirname(__file__), "..", "artifacts", "acceptance")

RUNS = [
    ("dual", 1), ("single", 1), ("generic", 1),
    ("dual", 2), ("single", 2),
    ("dual", 3), ("single", 3),
]

FRAMES = 5_000_000
WORKERS = 8
TRAIN_DROP = 0.1


def main():
    os.makedirs(ART, exist_ok=True)
    for variant, seed in RUNS:
        stem = os.path.join(ART, f"{variant}_s{seed}")
        ckpt, log = stem + ".dva", stem + ".csv"
        if os.path.exists(ckpt) and os.path.exists(log):
            print(f"skip {variant} seed {seed}: exists", flush=True)
            continue
        cfg = TrainConfig(scenario="basic", variant=variant, workers=WORKERS,
                          total_frames=FRAMES, seed=seed, checkpoint_path=ckpt,
                          log_path=log, checkpoint_interval=1_000_000,
                          train_drop=DropConfig(TRAIN_DROP, TRAIN_DROP))
        t0 = time.time()
        print(f"train {variant} seed {seed} ...", flush=True)
        result = train(cfg)
        tail = load_log(log)["trailing_mean"][-1]
        print(f"  done in {time.time() - t0:.0f}s: {result.env_frames} frames, "
              f"{result.updates} updates, {result.episodes} episodes, "
              f"trailing-100 mean {tail:.1f}", flush=True)


if __name__ == "__main__":
    main()
