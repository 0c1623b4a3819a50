"""Raw float32 raster pairs: ``name.f32`` data plus ``name.json`` sidecar."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

DTYPE = "f32le"
LAYOUT = "band-major"


def _paths(path):
    path = Path(path)
    if path.suffix in (".f32", ".json"):
        path = path.with_suffix("")
    return path.with_suffix(".f32"), path.with_suffix(".json")


def write_raster(path, img: np.ndarray, extra: dict | None = None) -> Path:
    """Write ``img`` (bands, height, width) and return the data file path.

    ``extra`` keys are merged into the sidecar after the required fields.
    """
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ValueError(f"expected a (bands, height, width) array, got {img.shape}")
    data_path, meta_path = _paths(path)
    data_path.parent.mkdir(parents=True, exist_ok=True)
    bands, height, width = img.shape
    meta = {"width": width, "height": height, "bands": bands, "dtype": DTYPE, "layout": LAYOUT}
    if extra:
        meta.update({k: v for k, v in extra.items() if k not in meta})
    np.ascontiguousarray(img, dtype="<f4").tofile(data_path)
    meta_path.write_text(json.dumps(meta, indent=2) + "\n")
    return data_path


def read_raster(path) -> np.ndarray:
    """Read a raster pair into a float64 ``(bands, height, width)`` array."""
    data_path, meta_path = _paths(path)
    meta = json.loads(meta_path.read_text())
    if meta.get("dtype", DTYPE) != DTYPE or meta.get("layout", LAYOUT) != LAYOUT:
        raise ValueError(f"{meta_path}: unsupported dtype/layout {meta.get('dtype')}/{meta.get('layout')}")
    shape = (int(meta["bands"]), int(meta["height"]), int(meta["width"]))
    raw = np.fromfile(data_path, dtype="<f4")
    if raw.size != shape[0] * shape[1] * shape[2]:
        raise ValueError(
            f"{data_path}: holds {raw.size} values, sidecar declares "
            f"{shape[2]}x{shape[1]}x{shape[0]}"
        )
    img = raw.reshape(shape).astype(np.float64)
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{data_path}: contains non-finite values")
    return img
