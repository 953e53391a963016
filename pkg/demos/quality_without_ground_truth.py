"""Estimate the Dice score of a segmentation without looking at its ground truth.

Runs in about a minute on one CPU core:

    python demos/quality_without_ground_truth.py
"""

import tempfile
from pathlib import Path

import numpy as np

from segqa import core, models, train
from segqa.data import build_quality_corpus, generate_synthetic_dataset, load_samples

SIZE = 32
work = Path(tempfile.mkdtemp(prefix="segqa-demo-"))

# A small synthetic cohort: smooth backgrounds with a bright cavity inside a
# darker ring. The ring is the structure we segment.
source = generate_synthetic_dataset(120, SIZE, seed=0, out_dir=work / "data")

# Candidate masks of every quality level, made by dilating, eroding, shifting,
# warping and punching holes into the ground truth. Each keeps its exact Dice.
corpus = build_quality_corpus(source, bins=5, per_bin={"train": 40, "val": 10, "test": 10}, seed=0,
                              out_dir=work / "corpus")

# The reconstruction network learns to paint the ring back in after it has
# been blanked out. It only ever sees ground-truth masks.
recnet = models.build_recnet(depth=3, base_width=8, seed=0, image_size=SIZE)
recnet = train.train_recnet(recnet, source, train.TrainConfig(epochs=15, batch_size=16, learning_rate=3e-3))

# A good mask blanks out the ring and nothing else, so the reconstruction
# matches the image. A bad mask blanks the wrong pixels and leaves a residual.
test = load_samples(corpus, "test")
good = max(test, key=lambda s: s.gt_dice)
bad = min((s for s in test if s.seg_candidate.any()), key=lambda s: s.gt_dice)
for label, s in (("good", good), ("bad", bad)):
    rec = models.reconstruct(recnet, core.mask_image(s.image, s.seg_candidate))
    dif = core.difference_image(s.image, rec)
    inside = np.abs(dif[s.seg_candidate == 1]).mean()
    print(f"{label} mask: Dice {s.gt_dice:.2f}, mean |residual| inside mask {inside:.3f}")

# The regressor reads (difference image, candidate mask) and outputs a Dice estimate.
small = dict(image_size=SIZE, widths=(8, 16, 16, 16, 16), hidden=(32, 16))
regnet = models.build_regnet("proposed", seed=0, **small)
regnet = train.train_regressor(regnet, recnet, corpus,
                               train.TrainConfig(epochs=20, batch_size=16, learning_rate=2e-3))

images = np.stack([s.image for s in test])
cands = np.stack([s.seg_candidate for s in test])
truth = np.array([s.gt_dice for s in test])
pred = models.predict_quality_batch(recnet, regnet, images, cands)
print(f"test MAE of predicted Dice: {np.abs(pred - truth).mean():.3f} over {len(test)} candidates")
for t, p in sorted(zip(truth, pred))[:: max(1, len(test) // 8)]:
    print(f"  true {t:.2f}  predicted {p:.2f}")
