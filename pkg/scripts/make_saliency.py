#!/usr/bin/env python3
"""Export saliency maps for the trained dual and single agents.

Runs each agent for a few decisions on the basic scenario and writes the
value/policy input-gradient maps plus raw views as PGM files under
artifacts/saliency/<variant>/.
"""
import os
import sys

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dualview.cli import main as cli_main  # noqa: E402

ROOT = os.path.join(os.path.dirname(__file__), "..")
ACC = os.path.join(ROOT, "artifacts", "acceptance")
OUT = os.path.join(ROOT, "artifacts", "saliency")


def main():
    for variant in ("dual", "single"):
        ckpt = os.path.join(ACC, f"{variant}_s1.dva")
        if not os.path.exists(ckpt):
            print(f"skip {variant}: no checkpoint at {ckpt}")
            continue
        out = os.path.join(OUT, variant)
        code = cli_main(["saliency", "--ckpt", ckpt, "--frames", "8",
                         "--seed", "42", "--out", out,
                         "--manifest", os.path.join(out, "manifest.json")])
        if code != 0:
            raise SystemExit(code)


if __name__ == "__main__":
    main()
