"""Single-step FGSM attacks on the quality predictors.

Two surfaces can be attacked:

``input_image``
    The slice itself, clipped to [0, 1]. For the proposed pipeline the
    gradient flows through masking and the reconstruction network, and the
    perturbed slice is masked and reconstructed again before regression.
``difference_image``
    The residual fed to the proposed regressor, clipped to [-1, 1]. Only
    valid for the proposed pipeline.

The candidate segmentation is never perturbed. The attack ascends the
squared prediction error ``(P - GT)**2``.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import core, models
from .data.storage import stack
from .errors import AttackError, ValidationError

SURFACES = ("input_image", "difference_image")
CLIP = {"input_image": (0.0, 1.0), "difference_image": (-1.0, 1.0)}
DEFAULT_EPSILONS = (0.0, 0.05, 0.1, 0.2, 0.3)
CSV_COLUMNS = ("sample_id", "epsilon", "surface", "mode", "gt_dice", "clean_pred", "attacked_pred")


@dataclass(frozen=True)
class AttackConfig:
    epsilons: tuple = DEFAULT_EPSILONS
    surface: str = "input_image"

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps:
            raise ValidationError("at least one epsilon is required")
        if any(e < 0 for e in eps):
            raise ValidationError("epsilons must be >= 0")
        if list(eps) != sorted(eps):
            raise ValidationError("epsilons must be sorted ascending")
        if self.surface not in SURFACES:
            raise ValidationError(f"surface must be one of {SURFACES}, got {self.surface!r}")
        object.__setattr__(self, "epsilons", eps)


@dataclass
class Pipeline:
    regnet: models.ModelState
    recnet: models.ModelState = None
    name: str = field(default="")

    @property
    def mode(self):
        return self.regnet.arch["input_mode"]

    def check(self, surface):
        if self.mode == "proposed" and self.recnet is None:
            raise ValidationError("proposed pipeline needs a REC-Net")
        if surface == "difference_image" and self.mode != "proposed":
            raise ValidationError("the difference_image surface only exists in proposed mode")


def fgsm_perturb(loss_gradient, clean, epsilon, clip_low, clip_high, sample_id=None):
    """``clip(clean + epsilon * sign(loss_gradient), clip_low, clip_high)`` with sign(0) = 0."""
    grad = np.asarray(loss_gradient)
    clean = np.asarray(clean)
    if grad.shape != clean.shape:
        raise ValidationError(f"gradient shape {grad.shape} != input shape {clean.shape}")
    if epsilon < 0:
        raise ValidationError(f"epsilon must be >= 0, got {epsilon}")
    if np.isnan(grad).any():
        raise AttackError(f"NaN gradient for sample {sample_id!r}")
    if epsilon == 0:
        return clean.copy()
    wide = clean.astype(np.float64)
    adv = np.clip(wide + epsilon * np.sign(grad).astype(np.float64), clip_low, clip_high).astype(clean.dtype)
    # Rounding to a narrower dtype can overshoot the budget by half an ulp.
    over = np.abs(adv.astype(np.float64) - wide) > epsilon
    if over.any():
        adv[over] = np.nextafter(adv[over], clean[over])
    return adv


def clean_surface(pipeline, images, segs, surface):
    """The unperturbed array that ``surface`` refers to, for a batch."""
    if surface == "input_image":
        return np.asarray(images, dtype=np.float32)
    rec = models.reconstruct_batch(pipeline.recnet, images * (1 - segs))
    return core.difference_image(images, rec).astype(np.float32)


def _forward_from_surface(pipeline, x, segs_t, surface):
    """Differentiable prediction as a function of the attacked surface ``x``."""
    if surface == "difference_image" or pipeline.mode == "baseline":
        first = x
    else:
        rec = pipeline.recnet.net((x * (1 - segs_t))[:, None])[:, 0]
        first = x - rec
    return pipeline.regnet.net(torch.stack([first, segs_t], dim=1))


def surface_gradient(pipeline, surface_arr, segs, gt_dice, surface):
    """Gradient of ``sum_i (P_i - GT_i)**2`` w.r.t. the attacked surface.

    Samples do not interact in any layer, so each slice of the result is the
    per-sample gradient.
    """
    dtype = models._param_dtype(pipeline.regnet)
    x = torch.as_tensor(np.asarray(surface_arr)).to(dtype).requires_grad_(True)
    segs_t = torch.as_tensor(np.asarray(segs)).to(dtype)
    target = torch.as_tensor(np.asarray(gt_dice)).to(dtype)
    pred = _forward_from_surface(pipeline, x, segs_t, surface)
    loss = ((pred - target) ** 2).sum()
    (grad,) = torch.autograd.grad(loss, x)
    return grad.numpy()


def predict_from_surface(pipeline, surface_arr, images, segs, surface):
    """Prediction after replacing ``surface`` by ``surface_arr`` (no gradients)."""
    if surface == "difference_image":
        return models.regress_batch(pipeline.regnet, surface_arr, segs)
    if pipeline.mode == "baseline":
        return models.predict_quality_baseline_batch(pipeline.regnet, surface_arr, segs)
    return models.predict_quality_batch(pipeline.recnet, pipeline.regnet, surface_arr, segs)


def attack_batch(pipeline, images, segs, gt_dice, surface, epsilons, ids=None):
    """Yield ``(epsilon, clean_surface, adversarial_surface, predictions)`` per epsilon.

    The gradient is computed once and reused for every epsilon.
    """
    pipeline.check(surface)
    images = np.asarray(images, dtype=np.float32)
    segs = np.asarray(segs, dtype=np.uint8)
    clean = clean_surface(pipeline, images, segs, surface)
    grad = surface_gradient(pipeline, clean, segs, gt_dice, surface)
    lo, hi = CLIP[surface]
    ids = ids if ids is not None else [str(i) for i in range(len(images))]
    for eps in epsilons:
        adv = np.stack([fgsm_perturb(g, c, eps, lo, hi, sample_id=i) for g, c, i in zip(grad, clean, ids)])
        yield eps, clean, adv, predict_from_surface(pipeline, adv, images, segs, surface)


def attack_sample(pipeline, sample, config, epsilon):
    """Attacked prediction for one QualitySample at ``epsilon``."""
    if epsilon not in config.epsilons:
        raise ValidationError(f"epsilon {epsilon} is not among the configured {config.epsilons}")
    seg_before = sample.seg_candidate.tobytes()
    (_, _, _, pred), = attack_batch(pipeline, sample.image[None], sample.seg_candidate[None],
                                    [sample.gt_dice], config.surface, [epsilon], ids=[sample.sample_id])
    assert sample.seg_candidate.tobytes() == seg_before
    return float(pred[0])


def sweep(pipeline, samples, config, batch_size=64):
    """Attack every sample at every epsilon.

    Returns rows ordered by epsilon, then sample, each with the columns of
    ``CSV_COLUMNS``. ``clean_pred`` is the unattacked prediction.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("cannot sweep an empty test split")
    pipeline.check(config.surface)
    by_eps = {eps: [] for eps in config.epsilons}
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo:lo + batch_size]
        images, segs, _, dice = stack(chunk)
        ids = [s.sample_id for s in chunk]
        clean_pred = predict_from_surface(pipeline, clean_surface(pipeline, images, segs, config.surface),
                                          images, segs, config.surface)
        for eps, _, _, pred in attack_batch(pipeline, images, segs, dice, config.surface, config.epsilons, ids):
            for sid, d, c, p in zip(ids, dice, clean_pred, pred):
                by_eps[eps].append({
                    "sample_id": sid, "epsilon": eps, "surface": config.surface,
                    "mode": pipeline.mode, "gt_dice": float(d),
                    "clean_pred": float(c), "attacked_pred": float(p),
                })
    return [row for eps in config.epsilons for row in by_eps[eps]]


def write_sweep_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r["sample_id"], repr(float(r["epsilon"])), r["surface"], r["mode"],
                        repr(r["gt_dice"]), repr(r["clean_pred"]), repr(r["attacked_pred"])])
    return path


def read_sweep_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            for k in ("epsilon", "gt_dice", "clean_pred", "attacked_pred"):
                r[k] = float(r[k])
            rows.append(r)
    return rows

