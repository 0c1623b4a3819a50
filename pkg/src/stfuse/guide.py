"""Guide image and structure-aware directional weights.

The guide is a median-filtered, band-averaged copy of the reference HR image.
Its four directional differences drive Gaussian edge weights, one per pixel
and direction, shared by every band.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .operators import NEIGHBOUR_OFFSETS, diff_forward


@dataclass(frozen=True)
class DirectionalWeights:
    """Per-pixel weights for the four difference directions.

    Attributes
    ----------
    planes : ndarray, shape (4, H, W)
        Weight of direction p at each pixel, after zeroing.
    delta : float
        Edge sensitivity used to build the weights.
    k_zero : int
        Number of smallest weights zeroed per pixel.
    """

    planes: np.ndarray
    delta: float = 0.1
    k_zero: int = 2

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float64)
        if planes.ndim != 3 or planes.shape[0] != 4:
            raise ValueError(f"weight planes must have shape (4, H, W), got {planes.shape}")
        if np.any(planes < 0) or np.any(planes > 1):
            raise ValueError("weights must lie in [0, 1]")
        planes.setflags(write=False)
        object.__setattr__(self, "planes", planes)

    @property
    def w_max(self) -> float:
        return float(self.planes.max()) if self.planes.size else 0.0

    @property
    def shape(self):
        return self.planes.shape[1:]

    @classmethod
    def ones(cls, height: int, width: int) -> "DirectionalWeights":
        """Unit weights: turns the weighted regulariser into plain TV."""
        return cls(np.ones((4, height, width)), delta=np.inf, k_zero=0)


def median_filter(band: np.ndarray, size: int = 3) -> np.ndarray:
    """``size x size`` median with replicated borders."""
    return ndimage.median_filter(np.asarray(band, dtype=np.float64), size=size, mode="nearest")


def build_guide(hr_ref: np.ndarray, size: int = 3) -> np.ndarray:
    """Median-filter each band of ``hr_ref`` and average across bands."""
    hr_ref = np.asarray(hr_ref, dtype=np.float64)
    return np.mean([median_filter(b, size) for b in hr_ref], axis=0)


def inside_mask(shape) -> np.ndarray:
    """(4, H, W) mask, True where the direction's neighbour lies inside the raster."""
    h, w = shape
    mask = np.zeros((4, h, w), dtype=bool)
    for p, (dr, dc) in enumerate(NEIGHBOUR_OFFSETS):
        mask[p, max(0, -dr): h - max(0, dr), max(0, -dc): w - max(0, dc)] = True
    return mask


def compute_weights(guide: np.ndarray, delta: float = 0.1, k: int = 2) -> DirectionalWeights:
    """Gaussian edge weights from guide differences, k smallest zeroed per pixel.

    Directions whose neighbour falls outside the raster carry no difference
    and rank below every in-raster direction, so they are zeroed first;
    otherwise border pixels would keep only those empty directions and lose
    all smoothing. Remaining ties go to the lower direction index.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if k not in (1, 2, 3, 4):
        raise ValueError(f"k must be one of 1, 2, 3, 4, got {k}")
    guide = np.asarray(guide, dtype=np.float64)
    if guide.ndim != 2:
        raise ValueError(f"guide must be a single band (H, W), got {guide.shape}")
    diffs = diff_forward(guide[None])[:, 0]
    raw = np.exp(-np.square(diffs) / delta**2)
    rank_key = np.where(inside_mask(guide.shape), raw, -1.0)
    order = np.argsort(rank_key, axis=0, kind="stable")
    w = raw.copy()
    np.put_along_axis(w, order[:k], 0.0, axis=0)
    return DirectionalWeights(w, delta=float(delta), k_zero=int(k))


def weights_from_reference(hr_ref: np.ndarray, delta: float = 0.1, k: int = 2) -> DirectionalWeights:
    return compute_weights(build_guide(hr_ref), delta, k)


def apply_weights(w: DirectionalWeights, g: np.ndarray) -> np.ndarray:
    """Multiply a (4, B, H, W) gradient field by the weights, broadcast over bands."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape[0] != 4 or g.shape[-2:] != w.shape:
        raise ValueError(f"gradient field {g.shape} does not match weights {w.planes.shape}")
    return g * w.planes[:, None]


def weighted_gradient(w: DirectionalWeights, img: np.ndarray) -> np.ndarray:
    return apply_weights(w, diff_forward(img))


def tgtv_value(w: DirectionalWeights, img: np.ndarray) -> float:
    """Weighted TV: sum over pixels of the norm over bands and directions."""
    wd = weighted_gradient(w, img)
    return float(np.sqrt(np.square(wd).sum(axis=(0, 1))).sum())
