"""Bin-balanced corpus of candidate segmentations with exact Dice labels."""

import logging
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import core
from ..errors import ValidationError
from .degrade import DegradationSpec, degrade_mask
from .storage import SPLITS, DatasetManifest, Record, read_array, write_array

log = logging.getLogger(__name__)

# Magnitude ranges (pixels) tuned for 64x64 synthetic slices; scaled by image
# side for other sizes.
MAGNITUDE_RANGES = {
    "dilate": 6.0,
    "erode": 4.0,
    "translate": 20.0,
    "elastic_warp": 8.0,
    "dropout_holes": 8.0,
}
IDENTITY_RATE = 0.05
COMPOSE_RATE = 0.4


def dice_bin(d, bins):
    return min(int(d * bins), bins - 1)


def random_specs(rng, scale=1.0, kinds=None):
    """Draw one or two chained DegradationSpecs."""
    kinds = list(kinds or MAGNITUDE_RANGES)
    if rng.random() < IDENTITY_RATE:
        return [DegradationSpec("dilate", 0.0, 0)]
    n = 2 if rng.random() < COMPOSE_RATE else 1
    specs = []
    for _ in range(n):
        kind = kinds[rng.integers(len(kinds))]
        if kind == "undertrained_model":
            specs.append(DegradationSpec(kind, 0.0, 0))
            continue
        mag = float(rng.uniform(0, MAGNITUDE_RANGES[kind] * scale))
        specs.append(DegradationSpec(kind, round(mag, 3), int(rng.integers(2**31))))
    return specs


def _apply(gt, specs, image, segmenter):
    out = gt
    for spec in specs:
        if not out.any():
            break
        out = degrade_mask(out, spec, image=image, segmenter=segmenter)
    return out


def build_quality_corpus(manifest, bins=10, per_bin=20, seed=0, out_dir=None, max_attempts=None,
                         segmenter=None):
    """Rejection-sample degraded candidates until every Dice bin is filled.

    ``per_bin`` is an int or a ``{split: int}`` mapping. For each split,
    source samples are visited round robin; each visit draws a random chain
    of degradations, and the candidate is kept if its Dice bin still has
    room. When a split exhausts ``max_attempts`` (default ``50 * bins *
    per_bin``) the partial corpus is kept and the unfilled bins are recorded
    under ``generator_config["unfilled_bins"]``.

    Passing a ``segmenter`` adds ``undertrained_model`` to the kinds drawn.
    """
    if bins < 2:
        raise ValidationError(f"bins must be >= 2, got {bins}")
    if out_dir is None:
        raise ValidationError("out_dir is required")
    quotas = per_bin if isinstance(per_bin, dict) else {s: per_bin for s in SPLITS}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds = list(MAGNITUDE_RANGES) + (["undertrained_model"] if segmenter is not None else [])

    records, unfilled, counts_out = [], {}, {}
    for split_idx, split in enumerate(SPLITS):
        sources = manifest.split(split)
        quota = quotas.get(split, 0)
        if not sources or quota <= 0:
            continue
        rng = np.random.default_rng([seed, split_idx])
        order = rng.permutation(len(sources))
        counts = np.zeros(bins, dtype=int)
        budget = max_attempts or 50 * bins * quota
        per_source, cache = {}, {}
        attempt = 0
        while counts.min() < quota and attempt < budget:
            src = sources[order[attempt % len(sources)]]
            attempt += 1
            if src.id not in cache:
                cache[src.id] = (read_array(manifest.resolve(src.image)),
                                 read_array(manifest.resolve(src.seg_gt)))
            image, gt = cache[src.id]
            scale = gt.shape[0] / 64
            specs = random_specs(rng, scale, kinds)
            cand = _apply(gt, specs, image, segmenter)
            d = core.dice(cand, gt)
            b = dice_bin(d, bins)
            if counts[b] >= quota:
                continue
            counts[b] += 1
            k = per_source.get(src.source_id, 0)
            per_source[src.source_id] = k + 1
            cid = f"{src.id}-c{k:03d}"
            cpath = write_array(out_dir / "candidates" / cid, cand)
            records.append(Record(
                id=cid, source_id=src.source_id, split=split,
                image=os.path.relpath(manifest.resolve(src.image), out_dir),
                seg_gt=os.path.relpath(manifest.resolve(src.seg_gt), out_dir),
                seg_candidate=str(cpath.relative_to(out_dir)),
                gt_dice=d,
                degradation=[asdict(spec) for spec in specs],
            ))
        counts_out[split] = counts.tolist()
        missing = [int(i) for i in np.flatnonzero(counts < quota)]
        if missing:
            unfilled[split] = missing
            log.warning("%s: attempt budget exhausted with bins %s below %d", split, missing, quota)

    config = {"bins": bins, "per_bin": quotas, "bin_counts": counts_out, "unfilled_bins": unfilled,
              "source_manifest": os.path.relpath(Path(manifest.root) / "manifest.json", out_dir),
              "kinds": kinds}
    corpus = DatasetManifest(records=records, seed=seed, generator_config=config, kind="corpus")
    corpus.save(out_dir / "manifest.json")
    return corpus
