#!/usr/bin/env python3
"""End-to-end demo: render two synthetic rooms, restyle one frame of the
first with the palette of the second, propagate the result across the
whole trajectory, and score the output.

Everything goes through the CLI so the demo doubles as a smoke test of
the packaged entry point. Outputs land under --out (default demo_out/).
"""

import argparse
import json
import sys
from pathlib import Path

from stylelift.cli import run


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--frames", type=int, default=5)
    ap.add_argument("--size", default="64x64")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--refiner", choices=["fill", "toy"], default="toy")
    args = ap.parse_args()

    out = Path(args.out)
    scene = out / "scene"
    style = out / "style"
    stylized = out / "stylized"
    lifted = out / "lifted"

    steps = [
        ["synth", "--out", str(scene), "--frames", str(args.frames),
         "--size", args.size, "--seed", str(args.seed),
         "--trajectory", "pan"],
        ["synth", "--out", str(style), "--frames", "1",
         "--size", args.size, "--seed", str(args.seed + 1),
         "--palette", "dusk", "--trajectory", "still"],
        ["stylize", "--scene", str(scene / "manifest.json"),
         "--style-scene", str(style / "manifest.json"),
         "--out", str(stylized)],
        ["lift", "--scene", str(scene / "manifest.json"),
         "--stylized", str(stylized / "stylized.rsim"),
         "--refiner", args.refiner, "--seed", str(args.seed),
         "--out", str(lifted)],
        ["eval", "--images", str(lifted / "stylized_001.rsim"),
         str(scene / "frames" / "001_image.rsim"),
         "--out", str(out / "eval.json")],
    ]
    for argv in steps:
        code = run(argv)
        if code != 0:
            print(f"demo step failed ({code}): {' '.join(argv)}",
                  file=sys.stderr)
            return code

    lift_report = json.loads((lifted / "report.json").read_text())
    eval_report = json.loads((out / "eval.json").read_text())
    print()
    print("demo summary")
    print(f"  frames lifted : {len(lift_report['frames'])}")
    print(f"  coverage      : " + ", ".join(
        f"{k}={v:.3f}" for k, v in sorted(lift_report["coverage"].items())))
    print(f"  PSNR vs render: {eval_report['images']['PSNR']}")
    print(f"  SSIM vs render: {eval_report['images']['SSIM']}")
    print(f"  outputs in    : {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
