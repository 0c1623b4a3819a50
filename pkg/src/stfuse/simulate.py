"""Synthetic observations: cartoon scenes, sensor degradation and noise cases.

Randomness comes from ``numpy.random.Generator`` seeded with PCG64
(``np.random.default_rng(seed)``), whose streams are stable across platforms
for a fixed numpy version.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import SensorModel, blur_downsample

# Gaussian sigma and salt-and-pepper ratio of the HR reference per noise case.
NOISE_CASES = {
    1: (0.0, 0.0),
    2: (0.05, 0.0),
    3: (0.05, 0.02),
    4: (0.05, 0.05),
}


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    sp_ratio: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not 0 <= self.sp_ratio < 1:
            raise ValueError(f"sp_ratio must lie in [0, 1), got {self.sp_ratio}")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def add_gaussian(img, spec: NoiseSpec, rng=None) -> np.ndarray:
    """Additive i.i.d. Gaussian noise; values are not clipped."""
    img = np.asarray(img, dtype=np.float64)
    if spec.sigma == 0:
        return img.copy()
    rng = _rng(spec.seed if rng is None else rng)
    return img + spec.sigma * rng.standard_normal(img.shape)


def add_salt_pepper(img, spec: NoiseSpec, rng=None) -> np.ndarray:
    """Replace ``round(sp_ratio * size)`` random entries, half by 1.0 and half by 0.0."""
    img = np.asarray(img, dtype=np.float64)
    out = img.copy()
    count = int(round(spec.sp_ratio * img.size))
    if count == 0:
        return out
    rng = _rng(spec.seed if rng is None else rng)
    idx = rng.choice(img.size, size=count, replace=False)
    flat = out.reshape(-1)
    flat[idx[: count // 2]] = 1.0
    flat[idx[count // 2:]] = 0.0
    return out


def simulate_lr(hr, sensor: SensorModel) -> np.ndarray:
    """Noise-free LR observation with no modelling error."""
    return blur_downsample(hr, sensor)


def apply_noise_case(hr, case: int, seed=None) -> np.ndarray:
    """Degrade an HR image per noise case 1-4 (Gaussian first, then salt and pepper)."""
    if case not in NOISE_CASES:
        raise ValueError(f"unknown noise case {case!r}; expected 1, 2, 3 or 4")
    sigma, ratio = NOISE_CASES[case]
    rng = np.random.default_rng(seed)
    noisy = add_gaussian(hr, NoiseSpec(sigma=sigma), rng)
    return add_salt_pepper(noisy, NoiseSpec(sp_ratio=ratio), rng)


def voronoi_labels(width, height, n_regions, rng) -> np.ndarray:
    """Label map of a random Voronoi partition of the grid."""
    seeds = rng.uniform(0, 1, size=(n_regions, 2)) * (height, width)
    rows, cols = np.mgrid[0:height, 0:width]
    d2 = (rows[None] - seeds[:, 0, None, None]) ** 2 + (cols[None] - seeds[:, 1, None, None]) ** 2
    return np.argmin(d2, axis=0)


def make_synthetic_scene(
    width=64,
    height=64,
    bands=3,
    seed=0,
    n_regions=12,
    value_range=(0.3, 0.7),
    max_shift=0.3,
):
    """Piecewise-constant reference/target pair sharing one Voronoi partition.

    Reference region values are uniform in ``value_range``; the target adds a
    per-region, per-band shift uniform in ``[-max_shift, max_shift]``. Edge
    locations therefore coincide while edge intensities change.

    Returns
    -------
    hr_ref, hr_target : ndarray, shape (bands, height, width)
    """
    if min(width, height) < 16:
        raise ValueError("synthetic scenes need width and height >= 16")
    rng = np.random.default_rng(seed)
    labels = voronoi_labels(width, height, n_regions, rng)
    ref_vals = rng.uniform(*value_range, size=(bands, n_regions))
    shifts = rng.uniform(-1.0, 1.0, size=(bands, n_regions)) * max_shift
    hr_ref = ref_vals[:, labels]
    hr_target = (ref_vals + shifts)[:, labels]
    return hr_ref, hr_target


def simulate_observations(hr_ref_clean, hr_target_clean, window: int, case: int, seed=None) -> dict:
    """Observation set: noisy HR reference and noise-free LR pair."""
    sensor = SensorModel.for_image(hr_ref_clean, window)
    return {
        "hr_ref": apply_noise_case(hr_ref_clean, case, seed),
        "lr_ref": simulate_lr(hr_ref_clean, sensor),
        "lr_target": simulate_lr(hr_target_clean, sensor),
        "hr_target": np.asarray(hr_target_clean, dtype=np.float64).copy(),
        "hr_ref_clean": np.asarray(hr_ref_clean, dtype=np.float64).copy(),
    }
