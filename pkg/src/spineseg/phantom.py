"""Synthetic spine phantoms: labeled vertebra stacks in a unit-intensity volume.

Each phantom stacks ellipsoidal vertebral bodies (plus a small posterior
spinous-process box) along the first axis, labeled 1..n top to bottom over a
zero background.  The intensity image gives every class its own base level
and then degrades it the way clinical volumes degrade: a smooth
multiplicative bias field, boundary blur, and additive noise.  Everything is
a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import GenerationError

MIN_VOXELS_PER_LABEL = 32


@dataclass
class VolumeSample:
    """Paired intensity volume and integer label volume."""

    image: np.ndarray  # (1, H, W, L) float32 in [0, 1]
    labels: np.ndarray  # (H, W, L) int32, 0 = background
    meta: dict = field(default_factory=dict)


def _ellipsoid_mask(shape, center, radii):
    grids = np.ogrid[tuple(slice(0, s) for s in shape)]
    acc = np.zeros(shape)
    for g, c, r in zip(grids, center, radii):
        acc = acc + ((g - c) / r) ** 2
    return acc <= 1.0


def _bias_field(shape, rng, amplitude: float, sigma_frac: float = 0.25):
    noise = rng.standard_normal(shape)
    smooth = ndimage.gaussian_filter(noise, sigma=[s * sigma_frac for s in shape])
    std = smooth.std()
    if std < 1e-12:
        return np.ones(shape)
    return 1.0 + amplitude * smooth / std


def generate_phantom(seed: int, patch_size=(32, 32, 32),
                     n_vertebrae: int = 4) -> VolumeSample:
    """Deterministically generate one labeled phantom.

    Raises :class:`GenerationError` when the requested vertebrae cannot fit
    or a label ends up with fewer than 32 voxels.
    """
    patch = tuple(int(p) for p in patch_size)
    h, w, l = patch
    band = h / n_vertebrae
    if band < 5.0:
        raise GenerationError(
            f"{n_vertebrae} vertebrae cannot fit along extent {h}")
    rng = np.random.default_rng(seed)
    labels = np.zeros(patch, dtype=np.int32)

    max_rh = band / 2.0 - 1.0
    for i in range(n_vertebrae):
        center_h = band * (i + 0.5) + rng.uniform(-0.08, 0.08) * band
        rh = rng.uniform(0.55, 0.95) * max_rh
        rw = rng.uniform(0.16, 0.24) * w
        rl = rng.uniform(0.16, 0.24) * l
        cw = w * 0.42 + rng.uniform(-0.04, 0.04) * w
        cl = l * 0.5 + rng.uniform(-0.04, 0.04) * l
        body = _ellipsoid_mask(patch, (center_h, cw, cl), (rh, rw, rl))
        # posterior spinous process: a thin box behind the body
        ph0 = int(round(center_h - max(1.0, rh * 0.4)))
        ph1 = int(round(center_h + max(1.0, rh * 0.4)))
        pw0 = int(round(cw + rw))
        pw1 = min(w, pw0 + max(2, int(round(0.12 * w))))
        pl0 = int(round(cl - max(1.0, 0.06 * l)))
        pl1 = int(round(cl + max(1.0, 0.06 * l)))
        process = np.zeros(patch, dtype=bool)
        process[max(0, ph0):min(h, ph1 + 1), pw0:pw1, max(0, pl0):min(l, pl1)] = True
        labels[body | process] = i + 1

    # the 32-voxel floor is stated for 32^3 / n=4; scale it for other geometries
    min_voxels = max(4, round(MIN_VOXELS_PER_LABEL * (h * w * l) / 32768
                              * 4 / n_vertebrae))
    counts = np.bincount(labels.reshape(-1), minlength=n_vertebrae + 1)
    for c in range(1, n_vertebrae + 1):
        if counts[c] < min_voxels:
            raise GenerationError(
                f"label {c} has only {counts[c]} voxels "
                f"(< {min_voxels}) at patch {patch}")

    # per-class base intensity over a dim background
    base = np.full(patch, 0.12)
    for c in range(1, n_vertebrae + 1):
        level = 0.45 + 0.5 * (c - 1) / max(1, n_vertebrae - 1)
        base[labels == c] = level
    image = base * _bias_field(patch, rng, amplitude=0.10)   # inhomogeneity
    image = ndimage.gaussian_filter(image, sigma=0.6)        # partial volume
    image = image + rng.normal(0.0, 0.05, size=patch)        # sensor noise
    image = np.clip(image, 0.0, 1.0).astype(np.float32)

    meta = {
        "seed": int(seed),
        "patch_size": list(patch),
        "n_vertebrae": int(n_vertebrae),
        "generator": "ellipsoid-stack-v1",
    }
    return VolumeSample(image=image[None], labels=labels, meta=meta)


def label_centroids(labels: np.ndarray, n_labels: int, axis: int = 0) -> np.ndarray:
    """Centroid coordinate along ``axis`` for labels 1..n (nan when absent)."""
    coords = np.arange(labels.shape[axis], dtype=np.float64)
    out = np.full(n_labels, np.nan)
    grid = np.moveaxis(labels, axis, 0)
    for c in range(1, n_labels + 1):
        mask = grid == c
        total = mask.sum()
        if total:
            out[c - 1] = (coords[:, None] * mask.reshape(mask.shape[0], -1)).sum() / total
    return out
