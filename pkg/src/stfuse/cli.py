"""Command-line entry point: ``stfuse {fuse,simulate,evaluate,demo}``.

Exit codes: 0 success (a fuse run that hit the iteration cap still exits 0,
with ``converged: false`` in its manifest), 2 bad arguments or inputs,
3 solver abort on a non-finite iterate.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .metrics import append_metrics_csv, evaluate, format_psnr, metrics_row
from .operators import SensorModel
from .raster import read_raster, write_raster
from .simulate import NOISE_CASES, make_synthetic_scene, simulate_observations
from .solver import FusionParams, FusionProblem, SolverDivergence, solve

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3

log = logging.getLogger("stfuse")

# CLI flag -> FusionParams field
_TUNING = {
    "sigma_h": "sigma_h",
    "r_h": "r_h",
    "r_l": "r_l",
    "delta": "delta",
    "k": "k_zero",
    "c_alpha": "c_alpha",
    "lam": "lam",
    "q": "q_norm",
    "max_iter": "max_iter",
    "tol": "tol_rel",
}


class UsageError(Exception):
    pass


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (Path, tuple)):
        return str(v) if isinstance(v, Path) else list(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _load_params(args) -> FusionParams:
    base = {}
    if args.config:
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(base, dict):
            raise UsageError("config must be a JSON object")
    try:
        params = FusionParams.from_dict(base)
        flags = {field: getattr(args, flag) for flag, field in _TUNING.items()
                 if getattr(args, flag) is not None}
        return replace(params, **flags)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _read(path, what):
    try:
        return read_raster(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {what} raster {path}: {exc}") from exc


def _parse_bands(text, n_bands):
    try:
        bands = [int(b) for b in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"--preview expects three comma-separated band numbers, got {text!r}") from exc
    if len(bands) != 3 or not all(1 <= b <= n_bands for b in bands):
        raise UsageError(f"--preview needs three band numbers in 1..{n_bands}")
    return [b - 1 for b in bands]


def write_preview(path, img, bands):
    """8-bit RGB PNG of three bands, clamped to [0, 1]."""
    from PIL import Image

    rgb = np.clip(np.stack([img[b] for b in bands], axis=-1), 0.0, 1.0)
    Image.fromarray(np.round(rgb * 255).astype(np.uint8), mode="RGB").save(path)


# -- fuse -------------------------------------------------------------------

def cmd_fuse(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": "fuse",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started": _now(),
        "inputs": {"hr_ref": args.hr_ref, "lr_ref": args.lr_ref, "lr_target": args.lr_target,
                   "config": args.config},
        "scale": args.scale,
        "seed": None,
        "outputs": {},
        "status": "error",
    }
    try:
        code = _fuse(args, out, manifest)
    except UsageError as exc:
        manifest["error"] = str(exc)
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except SolverDivergence as exc:
        manifest["error"] = str(exc)
        manifest["status"] = "diverged"
        print(f"solver aborted: {exc}", file=sys.stderr)
        code = EXIT_DIVERGED
    manifest["finished"] = _now()
    manifest["exit_code"] = code
    _write_json(out / "manifest.json", manifest)
    return code


def _fuse(args, out, manifest) -> int:
    params = _load_params(args)
    hr_ref = _read(args.hr_ref, "HR reference")
    lr_ref = _read(args.lr_ref, "LR reference")
    lr_tgt = _read(args.lr_target, "LR target")
    try:
        sensor = SensorModel.for_image(hr_ref, args.scale)
        problem = FusionProblem(hr_ref, lr_ref, lr_tgt, sensor, params)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    preview = _parse_bands(args.preview, hr_ref.shape[0]) if args.preview else None

    result = solve(problem)
    outputs = {
        "target_hr": result.target_hr,
        "ref_hr_denoised": result.ref_hr_denoised,
        "sparse_hr": result.sparse_hr,
        "sparse_lr_ref": result.sparse_lr_ref,
        "sparse_lr_target": result.sparse_lr_target,
    }
    for name, img in outputs.items():
        manifest["outputs"][name] = str(write_raster(out / name, img))
    result.write_trace_csv(out / "trace.csv")
    manifest["outputs"]["trace"] = str(out / "trace.csv")
    if preview is not None:
        for name in ("target_hr", "ref_hr_denoised"):
            write_preview(out / f"{name}.png", outputs[name], preview)
            manifest["outputs"][f"{name}_preview"] = str(out / f"{name}.png")
    manifest.update(
        status="ok",
        params=result.params.to_dict(),
        iterations=result.iterations,
        converged=result.converged,
        final_alpha=result.final_alpha,
    )
    print(f"{result.iterations} iterations, converged={result.converged}, wrote {out}")
    return EXIT_OK


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    try:
        return _simulate(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _simulate(args) -> int:
    if args.case not in NOISE_CASES:
        raise UsageError(f"--case must be one of {sorted(NOISE_CASES)}")
    if args.synthetic:
        w, h, b = args.synthetic
        try:
            ref, tgt = make_synthetic_scene(w, h, b, seed=args.seed, n_regions=args.regions,
                                            max_shift=args.max_shift)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        source = {"synthetic": [w, h, b], "regions": args.regions, "max_shift": args.max_shift}
    else:
        ref = _read(args.input, "input")
        tgt = _read(args.input_target, "target") if args.input_target else ref.copy()
        if tgt.shape != ref.shape:
            raise UsageError(f"target shape {tgt.shape} differs from reference {ref.shape}")
        source = {"input": args.input, "input_target": args.input_target}
    try:
        obs = simulate_observations(ref, tgt, args.scale, args.case, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = {"hr_ref": "hr_ref", "lr_ref": "lr_ref", "lr_target": "lr_target",
             "hr_target": "hr_target_truth", "hr_ref_clean": "hr_ref_truth"}
    sigma, ratio = NOISE_CASES[args.case]
    meta = {"case": args.case, "seed": args.seed, "scale": args.scale, "sigma_h": sigma,
            "r_h": ratio, "rng": "numpy PCG64 (default_rng)"}
    for key, name in names.items():
        write_raster(out / name, obs[key], extra={"role": key, **meta})
    _write_json(out / "scene.json", {**meta, **source, "version": __version__,
                                     "files": {k: f"{v}.f32" for k, v in names.items()}})
    print(f"case {args.case}, seed {args.seed}: wrote {out}")
    return EXIT_OK


# -- evaluate ---------------------------------------------------------------

def cmd_evaluate(args) -> int:
    try:
        est = _read(args.estimate, "estimate")
        truth = _read(args.truth, "truth")
        if est.shape != truth.shape:
            raise UsageError(f"shape mismatch: estimate {est.shape} vs truth {truth.shape}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    report = evaluate(est, truth)
    row = metrics_row(args.site, args.case, args.method, report, per_band=args.per_band)
    print(",".join(str(v) for v in row))
    if args.csv:
        append_metrics_csv(args.csv, row, per_band_count=len(report.per_band_ssim) if args.per_band else 0)
    return EXIT_OK


# -- demo -------------------------------------------------------------------

def cmd_demo(args) -> int:
    """Simulate a small scene, fuse it and score the result."""
    out = Path(args.out)
    sim = out / "scene"
    fused = out / "fused"
    common = ["--case", str(args.case), "--seed", str(args.seed), "--scale", str(args.scale)]
    steps = [
        ["simulate", "--synthetic", str(args.size), str(args.size), "3", "--out", str(sim)] + common,
        ["fuse", "--hr-ref", str(sim / "hr_ref.f32"), "--lr-ref", str(sim / "lr_ref.f32"),
         "--lr-target", str(sim / "lr_target.f32"), "--scale", str(args.scale),
         "--sigma-h", str(NOISE_CASES[args.case][0]), "--r-h", str(NOISE_CASES[args.case][1]),
         "--max-iter", str(args.max_iter), "--out", str(fused)],
        ["evaluate", "--estimate", str(fused / "target_hr.f32"), "--truth", str(sim / "hr_target_truth.f32"),
         "--site", "synthetic", "--case", str(args.case), "--method", "fused", "--csv", str(out / "metrics.csv")],
        ["evaluate", "--estimate", str(sim / "hr_ref.f32"), "--truth", str(sim / "hr_target_truth.f32"),
         "--site", "synthetic", "--case", str(args.case), "--method", "noisy_reference",
         "--csv", str(out / "metrics.csv")],
    ]
    for argv in steps:
        code = main(argv)
        if code != EXIT_OK:
            return code
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stfuse", description="Spatiotemporal fusion of HR/LR rasters.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fuse", help="estimate the HR target image")
    f.add_argument("--hr-ref", required=True, help="noisy HR reference raster")
    f.add_argument("--lr-ref", required=True, help="LR raster at the reference date")
    f.add_argument("--lr-target", required=True, help="LR raster at the target date")
    f.add_argument("--scale", type=int, required=True, help="HR/LR resolution ratio")
    f.add_argument("--out", required=True, help="output directory")
    f.add_argument("--sigma-h", dest="sigma_h", type=float, help="Gaussian noise level of the HR reference")
    f.add_argument("--r-h", dest="r_h", type=float, help="sparse-noise ratio of the HR reference")
    f.add_argument("--r-l", dest="r_l", type=float, help="sparse-noise ratio of the LR images")
    f.add_argument("--delta", type=float)
    f.add_argument("--k", type=int, help="weights zeroed per pixel")
    f.add_argument("--c-alpha", dest="c_alpha", type=float)
    f.add_argument("--lambda", dest="lam", type=float)
    f.add_argument("--q", choices=("l1", "l2", "l12"))
    f.add_argument("--max-iter", dest="max_iter", type=int)
    f.add_argument("--tol", type=float)
    f.add_argument("--config", help="JSON file of solver parameters; flags override it")
    f.add_argument("--preview", metavar="B1,B2,B3", help="also write PNG previews of three bands (1-based)")
    f.set_defaults(func=cmd_fuse)

    s = sub.add_parser("simulate", help="generate degraded observations")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", nargs=3, type=int, metavar=("W", "H", "B"))
    src.add_argument("--input", help="clean HR reference raster")
    s.add_argument("--input-target", help="clean HR target raster (defaults to the reference)")
    s.add_argument("--case", type=int, default=2)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", type=int, default=8)
    s.add_argument("--regions", type=int, default=12)
    s.add_argument("--max-shift", type=float, default=0.3)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evaluate", help="PSNR and MSSIM of an estimate")
    e.add_argument("--estimate", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--csv", help="append the row to this CSV file")
    e.add_argument("--site", default="site")
    e.add_argument("--case", default="")
    e.add_argument("--method", default="fused")
    e.add_argument("--per-band", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("demo", help="simulate, fuse and evaluate a small synthetic scene")
    d.add_argument("--out", default="stfuse-demo")
    d.add_argument("--size", type=int, default=32)
    d.add_argument("--scale", type=int, default=4)
    d.add_argument("--case", type=int, default=2)
    d.add_argument("--seed", type=int, default=7)
    d.add_argument("--max-iter", type=int, default=10000)
    d.set_defaults(func=cmd_demo)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
