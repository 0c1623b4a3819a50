"""Linear operators on multiband rasters.

Images are float arrays of shape ``(bands, height, width)``; flattening in C
order gives the band-major layout used on disk. Pixel ``(i, j)`` addresses
column ``i`` and row ``j``, so ``img[b, j, i]``.

Gradient fields stack the four directional differences along a new leading
axis, giving shape ``(4, bands, height, width)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# (row offset, column offset) of the neighbour compared against each pixel,
# in direction order p = 1..4: (i+1, j), (i+1, j-1), (i, j-1), (i-1, j-1).
NEIGHBOUR_OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))


@dataclass(frozen=True)
class SensorModel:
    """Blur/downsample geometry linking the HR and LR grids.

    ``window`` is the box-blur size and the decimation factor. Both HR
    dimensions must be exact multiples of it.
    """

    window: int
    hr_width: int
    hr_height: int

    def __post_init__(self):
        if int(self.window) != self.window or self.window < 1:
            raise ValueError(f"window must be a positive integer, got {self.window}")
        if self.hr_width % self.window or self.hr_height % self.window:
            raise ValueError(
                f"HR size {self.hr_width}x{self.hr_height} is not a multiple "
                f"of window {self.window}"
            )

    @classmethod
    def for_image(cls, hr: np.ndarray, window: int) -> "SensorModel":
        return cls(window=window, hr_width=hr.shape[-1], hr_height=hr.shape[-2])

    @property
    def lr_width(self) -> int:
        return self.hr_width // self.window

    @property
    def lr_height(self) -> int:
        return self.hr_height // self.window

    @property
    def center_offset(self) -> int:
        """Offset of the sampled tap inside each ``window x window`` block."""
        return self.window // 2


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate a multiband raster and return it as a float64 array."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name} must have shape (bands, height, width), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _slices(offset: int, n: int):
    # (destination, source) slices so that dst[k] pairs with src[k] = k + offset.
    if offset > 0:
        return slice(0, n - offset), slice(offset, n)
    if offset < 0:
        return slice(-offset, n), slice(0, n + offset)
    return slice(0, n), slice(0, n)


def diff_forward(img: np.ndarray) -> np.ndarray:
    """Four-direction forward differences with zero at out-of-raster neighbours."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-2:]
    out = np.zeros((4,) + img.shape, dtype=np.float64)
    for p, (dr, dc) in enumerate(NEIGHBOUR_OFFSETS):
        rd, rs = _slices(dr, h)
        cd, cs = _slices(dc, w)
        out[p, ..., rd, cd] = img[..., rs, cs] - img[..., rd, cd]
    return out


def diff_adjoint(g: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`diff_forward`."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape[0] != 4:
        raise ValueError(f"gradient field must have 4 planes, got shape {g.shape}")
    h, w = g.shape[-2:]
    out = np.zeros(g.shape[1:], dtype=np.float64)
    for p, (dr, dc) in enumerate(NEIGHBOUR_OFFSETS):
        rd, rs = _slices(dr, h)
        cd, cs = _slices(dc, w)
        gp = g[p, ..., rd, cd]
        out[..., rd, cd] -= gp
        out[..., rs, cs] += gp
    return out


def _check_hr(hr, m: SensorModel):
    if hr.shape[-2:] != (m.hr_height, m.hr_width):
        raise ValueError(
            f"HR image is {hr.shape[-1]}x{hr.shape[-2]}, sensor expects "
            f"{m.hr_width}x{m.hr_height}"
        )


def _check_lr(lr, m: SensorModel):
    if lr.shape[-2:] != (m.lr_height, m.lr_width):
        raise ValueError(
            f"LR image is {lr.shape[-1]}x{lr.shape[-2]}, sensor expects "
            f"{m.lr_width}x{m.lr_height}"
        )


def blur_downsample(hr: np.ndarray, m: SensorModel) -> np.ndarray:
    """Box blur of size ``m.window`` sampled at each block's centre tap.

    With the box window spanning ``[c - s//2, c + (s - 1)//2]`` around tap
    ``c = k*s + s//2``, the window is exactly block ``k``, so the composite
    operator is a block mean and never reaches the raster border.
    """
    hr = np.asarray(hr, dtype=np.float64)
    _check_hr(hr, m)
    s = m.window
    blocks = hr.reshape(hr.shape[:-2] + (m.lr_height, s, m.lr_width, s))
    return blocks.mean(axis=(-3, -1))


def blur_downsample_adjoint(lr: np.ndarray, m: SensorModel) -> np.ndarray:
    """Adjoint of :func:`blur_downsample`: spread each LR value over its block / s^2."""
    lr = np.asarray(lr, dtype=np.float64)
    _check_lr(lr, m)
    return upsample_replicate(lr, m) / float(m.window * m.window)


def upsample_replicate(lr: np.ndarray, m: SensorModel) -> np.ndarray:
    """Nearest-neighbour upsampling: each LR pixel fills its s x s HR block."""
    lr = np.asarray(lr, dtype=np.float64)
    _check_lr(lr, m)
    s = m.window
    return np.repeat(np.repeat(lr, s, axis=-2), s, axis=-1)


def power_iteration(op, adj, shape, n_iter=200, seed=0) -> float:
    """Estimate ``||op||^2`` by power iteration on ``adj(op(.))``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iter):
        y = adj(op(x))
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return 0.0
        x = y / lam
    return lam
