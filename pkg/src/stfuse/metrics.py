"""PSNR and band-averaged SSIM for reflectance images in [0, 1]."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CSV_COLUMNS = ("site", "case", "method", "psnr", "mssim")


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    mssim: float
    per_band_ssim: tuple


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(estimate, truth, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; ``inf`` when the images are identical."""
    est, ref = _same_shape(estimate, truth)
    mse = float(np.mean(np.square(est - ref)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def ssim_band(estimate, truth, window: int = 8, data_range: float = 1.0, k1=0.01, k2=0.03) -> float:
    """Mean SSIM over all ``window x window`` positions fully inside the band.

    Local statistics use uniform weights and population (1/N) moments. The
    window shrinks to the band size for bands smaller than ``window``.
    """
    x, y = _same_shape(estimate, truth)
    if x.ndim != 2:
        raise ValueError(f"expected a single band (H, W), got {x.shape}")
    win = (min(window, x.shape[0]), min(window, x.shape[1]))
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    px = sliding_window_view(x, win)
    py = sliding_window_view(y, win)
    mx = px.mean(axis=(-2, -1))
    my = py.mean(axis=(-2, -1))
    dx = px - mx[..., None, None]
    dy = py - my[..., None, None]
    vx = np.mean(dx * dx, axis=(-2, -1))
    vy = np.mean(dy * dy, axis=(-2, -1))
    cxy = np.mean(dx * dy, axis=(-2, -1))
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))
    return float(s.mean())


def mssim(estimate, truth, **kw) -> float:
    est, ref = _same_shape(estimate, truth)
    return float(np.mean([ssim_band(e, r, **kw) for e, r in zip(est, ref)]))


def evaluate(estimate, truth) -> MetricReport:
    est, ref = _same_shape(estimate, truth)
    per_band = tuple(ssim_band(e, r) for e, r in zip(est, ref))
    return MetricReport(psnr=psnr(est, ref), mssim=float(np.mean(per_band)), per_band_ssim=per_band)


def format_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else repr(value)


def metrics_row(site, case, method, report: MetricReport, per_band=False) -> list:
    row = [site, case, method, format_psnr(report.psnr), repr(report.mssim)]
    if per_band:
        row.extend(repr(v) for v in report.per_band_ssim)
    return row


def append_metrics_csv(path, row, per_band_count: int = 0):
    """Append ``row``, writing the header first if the file is new or empty."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            header = list(CSV_COLUMNS) + [f"ssim_b{i + 1}" for i in range(per_band_count)]
            writer.writerow(header)
        writer.writerow(row)
