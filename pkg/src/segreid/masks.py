"""Pixel masks to token-level foreground indicators."""

from __future__ import annotations

import numpy as np


class GeometryError(ValueError):
    """Image/mask dimensions incompatible with the patch grid."""


def patchify_mask(mask, patch: int, rho: float = 0.5) -> np.ndarray:
    """Token mask ``[1, m_1, ..., m_N]`` from a binary ``H x W`` pixel mask.

    Patches are enumerated row-major over the patch grid, matching the
    encoder's tokenisation. ``m_i = 1`` iff the foreground fraction of patch
    ``i`` is at least ``rho``. Index 0 (class token) is always 1.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise GeometryError(f"pixel mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("pixel mask must be binary")
    h, w = mask.shape
    if h % patch or w % patch:
        raise GeometryError(f"mask {h}x{w} is not divisible by patch size {patch}")
    blocks = mask.reshape(h // patch, patch, w // patch, patch).astype(np.float64)
    frac = blocks.mean(axis=(1, 3)).reshape(-1)
    return np.concatenate([[1], (frac >= rho).astype(np.uint8)]).astype(np.uint8)


def perturb(m: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Flip each background entry to foreground with probability ``p``.

    Foreground entries and the class token never change. Works on a single
    mask or a batch (last axis = tokens); one uniform draw per entry.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"perturbation probability must lie in [0, 1], got {p}")
    m = np.asarray(m, dtype=np.uint8)
    flips = rng.random(m.shape) < p
    out = np.where(m == 0, flips, True).astype(np.uint8)
    out[..., 0] = 1
    return out


def interaction_mask(m: np.ndarray) -> np.ndarray:
    """Pairwise foreground matrix ``R[i, j] = m[i] * m[j]`` (batched on leading axes)."""
    m = np.asarray(m)
    return (m[..., :, None] * m[..., None, :]).astype(np.uint8)
