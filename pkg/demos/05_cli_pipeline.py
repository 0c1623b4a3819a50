"""
Command-line pipeline
=====================

The same workflow through the ``stfuse`` command: simulate, fuse, evaluate.
Everything lands in ``./stfuse-cli-demo``.
"""
import subprocess
import sys
from pathlib import Path

out = Path("stfuse-cli-demo")
run = [sys.executable, "-m", "stfuse"]

subprocess.run(run + ["simulate", "--synthetic", "32", "32", "3", "--case", "3", "--seed", "7",
                      "--scale", "4", "--out", str(out / "scene")], check=True)
subprocess.run(run + ["fuse",
                      "--hr-ref", str(out / "scene/hr_ref.f32"),
                      "--lr-ref", str(out / "scene/lr_ref.f32"),
                      "--lr-target", str(out / "scene/lr_target.f32"),
                      "--scale", "4", "--sigma-h", "0.05", "--r-h", "0.02",
                      "--out", str(out / "fused")], check=True)
subprocess.run(run + ["evaluate",
                      "--estimate", str(out / "fused/target_hr.f32"),
                      "--truth", str(out / "scene/hr_target_truth.f32"),
                      "--site", "synthetic", "--case", "3", "--csv", str(out / "metrics.csv")], check=True)

print((out / "fused/manifest.json").read_text()[:400])
