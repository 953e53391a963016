"""Desk-scale stand-in for short-axis cardiac slices.

Every sample is a smooth textured background with a few distractor blobs,
and an elliptical annulus (the "myocardium", the target) around a bright
cavity. The annulus is the exact ground-truth mask.
"""

from pathlib import Path

import numpy as np
from scipy import ndimage

from .. import core
from ..errors import ValidationError
from .storage import DatasetManifest, Record, assign_splits, write_array

MIN_AREA, MAX_AREA = 0.02, 0.40


def _smooth_noise(rng, n, sigma):
    field = ndimage.gaussian_filter(rng.standard_normal((n, n)), sigma, mode="wrap")
    return field / (field.std() + 1e-12)


def _ellipse(yy, xx, cy, cx, a, b, theta):
    u = (xx - cx) * np.cos(theta) + (yy - cy) * np.sin(theta)
    v = -(xx - cx) * np.sin(theta) + (yy - cy) * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def render_sample(rng, n):
    """Draw one ``(image, mask)`` pair of side ``n`` from ``rng``."""
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    img = 0.35 + 0.1 * _smooth_noise(rng, n, n / 8)
    for _ in range(rng.integers(2, 6)):
        cy, cx = rng.uniform(0, n, size=2)
        a, b = rng.uniform(0.04 * n, 0.15 * n, size=2)
        blob = _ellipse(yy, xx, cy, cx, a, b, rng.uniform(0, np.pi))
        img = np.where(blob, rng.uniform(0.05, 0.9), img)
    img = ndimage.gaussian_filter(img, 1.0)

    while True:
        cy, cx = n / 2 + rng.uniform(-n / 10, n / 10, size=2)
        a = rng.uniform(0.16 * n, 0.26 * n)
        b = a * rng.uniform(0.75, 1.0)
        t = rng.uniform(0.05 * n, 0.09 * n)
        theta = rng.uniform(0, np.pi)
        outer = _ellipse(yy, xx, cy, cx, a, b, theta)
        inner = _ellipse(yy, xx, cy, cx, a - t, b - t, theta)
        mask = outer & ~inner
        if MIN_AREA <= mask.mean() <= MAX_AREA:
            break

    cavity = rng.uniform(0.75, 0.95) + 0.03 * _smooth_noise(rng, n, 2.0)
    wall = rng.uniform(0.22, 0.4) + 0.03 * _smooth_noise(rng, n, 1.0)
    img = np.where(inner, cavity, img)
    img = np.where(mask, wall, img)
    img = img + 0.02 * rng.standard_normal((n, n))
    return core.normalize(img), mask.astype(np.uint8)


def generate_synthetic_dataset(count, image_size=64, seed=0, out_dir=None, fractions=(0.7, 0.15, 0.15)):
    """Render ``count`` samples into ``out_dir`` and return their manifest.

    Sample ``i`` is drawn from a generator seeded with ``seed + i``, so the
    output is a pure function of ``(count, image_size, seed)``. Each sample is
    its own source and the split is made over sources.
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    if image_size < 32:
        raise ValidationError(f"image_size must be >= 32, got {image_size}")
    if out_dir is None:
        raise ValidationError("out_dir is required")
    out_dir = Path(out_dir)
    ids = [f"synth-{i:05d}" for i in range(count)]
    splits = assign_splits(ids, seed, fractions)
    records = []
    for i, sid in enumerate(ids):
        image, mask = render_sample(np.random.default_rng(seed + i), image_size)
        img_path = write_array(out_dir / "samples" / sid / "image", image)
        gt_path = write_array(out_dir / "samples" / sid / "seg_gt", mask)
        rel_img = str(img_path.relative_to(out_dir))
        rel_gt = str(gt_path.relative_to(out_dir))
        records.append(Record(id=sid, source_id=sid, split=splits[sid], image=rel_img,
                              seg_gt=rel_gt, seg_candidate=rel_gt, gt_dice=1.0))
    config = {"generator": "synthetic_annulus", "count": count, "image_size": image_size,
              "fractions": list(fractions)}
    manifest = DatasetManifest(records=records, seed=seed, generator_config=config, kind="source")
    manifest.save(out_dir / "manifest.json")
    return manifest
