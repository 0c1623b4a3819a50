"""Proximity operators and projections used by the fusion solver.

Group-structured operators take ``axis``: the axes spanned by one group. For
a gradient field of shape ``(4, bands, H, W)`` with one group per pixel over
all directions and bands, pass ``axis=(0, 1)``.
"""
from __future__ import annotations

import numpy as np

# Group norms below this are treated as exactly zero.
NORM_FLOOR = 1e-300


def group_norms(x: np.ndarray, axis=-1) -> np.ndarray:
    return np.sqrt(np.sum(np.square(x), axis=axis, keepdims=True))


def l12_norm(x: np.ndarray, axis=-1) -> float:
    """Mixed l1,2 norm: sum over groups of each group's Euclidean norm."""
    return float(np.sum(group_norms(x, axis)))


def prox_l12(x: np.ndarray, gamma: float, axis=-1) -> np.ndarray:
    """Group soft-thresholding, the prox of ``gamma * ||.||_{1,2}``."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    x = np.asarray(x, dtype=np.float64)
    norms = group_norms(x, axis)
    safe = np.where(norms > NORM_FLOOR, norms, 1.0)
    scale = np.where(norms > NORM_FLOOR, np.maximum(1.0 - gamma / safe, 0.0), 0.0)
    return x * scale


def project_hyperslab(x: np.ndarray, center: float, radius: float) -> np.ndarray:
    """Project onto ``{z : |center - sum(z)| <= radius}`` by a uniform shift."""
    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")
    x = np.asarray(x, dtype=np.float64)
    total = x.sum()
    lo, hi = center - radius, center + radius
    if total < lo:
        return x + (lo - total) / x.size
    if total > hi:
        return x + (hi - total) / x.size
    return x.copy()


def project_l2_ball(x: np.ndarray, radius: float, center=0.0) -> np.ndarray:
    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")
    x = np.asarray(x, dtype=np.float64)
    d = x - center
    n = float(np.linalg.norm(d))
    if n <= radius:
        return x.copy()
    if radius == 0.0:
        return np.broadcast_to(np.asarray(center, dtype=np.float64), x.shape).copy()
    return center + d * (radius / n)


def _simplex_threshold(a: np.ndarray, radius: float) -> float:
    # Threshold t with sum(max(a - t, 0)) == radius for nonnegative a, sum(a) > radius.
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(u * k > css - radius)[0][-1]
    return (css[rho] - radius) / (rho + 1.0)


def project_l1_ball(x: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the zero-centred l1 ball.

    Sort-and-threshold: O(n log n) in the number of entries.
    """
    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")
    x = np.asarray(x, dtype=np.float64)
    a = np.abs(x)
    if a.sum() <= radius:
        return x.copy()
    if radius == 0.0:
        return np.zeros_like(x)
    t = _simplex_threshold(a.ravel(), radius)
    return np.sign(x) * np.maximum(a - t, 0.0)


def project_l12_ball(x: np.ndarray, radius: float, axis=-1) -> np.ndarray:
    """Project onto ``{z : ||z||_{1,2} <= radius}``.

    Group norms are projected onto the l1 ball, then each group is rescaled to
    its new norm. A zero radius returns zeros.
    """
    if radius < 0:
        raise ValueError(f"radius must be nonnegative, got {radius}")
    x = np.asarray(x, dtype=np.float64)
    norms = group_norms(x, axis)
    if norms.sum() <= radius:
        return x.copy()
    if radius == 0.0:
        return np.zeros_like(x)
    target = project_l1_ball(norms, radius)
    live = norms > NORM_FLOOR
    scale = np.where(live, target / np.where(live, norms, 1.0), 0.0)
    return x * scale


def prox_conjugate(x: np.ndarray, gamma: float, prox_of_f) -> np.ndarray:
    """Prox of ``gamma * f^*`` through the Moreau identity.

    ``prox_of_f(v, t)`` must return ``prox_{t f}(v)``; the result is
    ``x - gamma * prox_of_f(x / gamma, 1 / gamma)``.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    x = np.asarray(x, dtype=np.float64)
    return x - gamma * prox_of_f(x / gamma, 1.0 / gamma)


def q_norm(x: np.ndarray, q: str, axis=-1) -> float:
    """Norm selected by name: ``"l1"``, ``"l2"`` or ``"l12"``."""
    if q == "l1":
        return float(np.abs(x).sum())
    if q == "l2":
        return float(np.linalg.norm(np.ravel(x)))
    if q == "l12":
        return l12_norm(x, axis)
    raise ValueError(f"unknown norm {q!r}; expected l1, l2 or l12")


def project_q_ball(x: np.ndarray, q: str, radius: float, axis=-1) -> np.ndarray:
    """Projection onto the zero-centred ball of :func:`q_norm`."""
    if q == "l1":
        return project_l1_ball(x, radius)
    if q == "l2":
        return project_l2_ball(x, radius)
    if q == "l12":
        return project_l12_ball(x, radius, axis)
    raise ValueError(f"unknown norm {q!r}; expected l1, l2 or l12")
