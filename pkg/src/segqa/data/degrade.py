"""Simulated imperfect segmentations of graded quality."""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .. import core
from ..errors import ValidationError

KINDS = ("dilate", "erode", "translate", "elastic_warp", "dropout_holes", "undertrained_model")
DETERMINISTIC_KINDS = KINDS[:-1]


@dataclass(frozen=True)
class DegradationSpec:
    """``magnitude`` is in pixels for every deterministic kind.

    dilate/erode: disk radius. translate: shift length (direction drawn from
    ``seed``). elastic_warp: peak displacement of a smooth random field.
    dropout_holes: radius of the punched-out disks. undertrained_model
    ignores the magnitude and thresholds a segmenter's output.
    """

    kind: str
    magnitude: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown degradation kind {self.kind!r}; expected one of {KINDS}")
        if not self.magnitude >= 0:
            raise ValidationError(f"magnitude must be >= 0, got {self.magnitude}")


def disk(radius):
    r = int(np.floor(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy**2 + xx**2) <= radius**2


def _shift(mask, dy, dx):
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys, yd = (slice(0, h - dy), slice(dy, h)) if dy >= 0 else (slice(-dy, h), slice(0, h + dy))
    xs, xd = (slice(0, w - dx), slice(dx, w)) if dx >= 0 else (slice(-dx, w), slice(0, w + dx))
    if h - abs(dy) > 0 and w - abs(dx) > 0:
        out[yd, xd] = mask[ys, xs]
    return out


def _translate(mask, magnitude, rng):
    angle = rng.uniform(0, 2 * np.pi)
    dy = int(round(magnitude * np.sin(angle)))
    dx = int(round(magnitude * np.cos(angle)))
    return _shift(mask, dy, dx)


def _elastic(mask, magnitude, rng):
    h, w = mask.shape
    sigma = max(h, w) / 8
    fields = []
    for _ in range(2):
        f = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma)
        fields.append(f / (np.abs(f).max() + 1e-12) * magnitude)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.array([yy + fields[0], xx + fields[1]])
    return ndimage.map_coordinates(mask, coords, order=0, mode="constant", cval=0)


def _holes(mask, magnitude, rng):
    out = mask.copy()
    fg = np.argwhere(mask)
    n_holes = int(rng.integers(2, 7))
    h, w = mask.shape
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_holes):
        cy, cx = fg[rng.integers(len(fg))]
        out[(yy - cy) ** 2 + (xx - cx) ** 2 <= magnitude**2] = 0
    return out


def degrade_mask(gt, spec, image=None, segmenter=None):
    """Return a candidate segmentation derived from ``gt`` according to ``spec``.

    For the deterministic kinds a zero magnitude returns ``gt`` unchanged.
    ``undertrained_model`` needs ``image`` and a ``segmenter`` model state.
    """
    gt = core.as_mask(gt)
    if not gt.any():
        raise ValidationError("cannot degrade an empty mask")
    if spec.kind == "undertrained_model":
        if segmenter is None or image is None:
            raise ValidationError("undertrained_model degradation needs an image and a segmenter")
        from ..models import segment
        return segment(segmenter, image)
    if spec.magnitude == 0:
        return gt.copy()
    rng = np.random.default_rng(spec.seed)
    m = spec.magnitude
    if spec.kind == "dilate":
        out = ndimage.binary_dilation(gt, structure=disk(m))
    elif spec.kind == "erode":
        out = ndimage.binary_erosion(gt, structure=disk(m))
    elif spec.kind == "translate":
        out = _translate(gt, m, rng)
    elif spec.kind == "elastic_warp":
        out = _elastic(gt, m, rng)
    else:
        out = _holes(gt, m, rng)
    return out.astype(np.uint8)
