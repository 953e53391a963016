"""Array mathematics for quality estimation: masking, residuals, Dice, scaling.

Images are 2D float arrays with intensities in [0, 1]; masks are 2D integer
arrays holding only 0 (background) and 1 (target).
"""

import numpy as np

from .errors import DimensionError, ValidationError

MIN_SIZE = 8


def _check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {names[0]}{a.shape} vs {names[1]}{b.shape}")


def as_mask(mask):
    """Return ``mask`` as a uint8 array, raising if it holds values other than 0/1."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DimensionError(f"mask must be 2D, got shape {mask.shape}")
    if mask.dtype == bool:
        return mask.astype(np.uint8)
    if not np.all((mask == 0) | (mask == 1)):
        raise ValidationError("mask must be binary (values in {0, 1})")
    return mask.astype(np.uint8)


def as_image(image, check_range=True):
    image = np.asarray(image)
    if image.ndim != 2:
        raise DimensionError(f"image must be 2D, got shape {image.shape}")
    if not np.issubdtype(image.dtype, np.floating):
        image = image.astype(np.float32)
    if not np.all(np.isfinite(image)):
        raise ValidationError("image contains NaN or Inf")
    if check_range and (image.min() < 0 or image.max() > 1):
        raise ValidationError("image intensities must lie in [0, 1]")
    return image


def validate_image(image):
    """Full Image contract: finite, in [0, 1], square, at least 8 pixels on a side."""
    image = as_image(image)
    h, w = image.shape
    if h != w or h < MIN_SIZE:
        raise DimensionError(f"image must be square with side >= {MIN_SIZE}, got {image.shape}")
    return image


def mask_image(image, mask):
    """Zero every pixel labelled as target: ``image * (1 - mask)``."""
    image = np.asarray(image)
    mask = as_mask(mask)
    _check_same_shape(image, mask, ("image", "mask"))
    return image * (1 - mask).astype(image.dtype)


def difference_image(original, reconstruction):
    """Residual ``original - reconstruction``.

    Single-precision inputs are subtracted in double precision. For float32
    values in [0, 1] that are not smaller than about 1e-9 the difference is
    then exact, so ``reconstruction + difference`` recovers ``original`` bit
    for bit.
    """
    original = np.asarray(original)
    reconstruction = np.asarray(reconstruction)
    _check_same_shape(original, reconstruction, ("original", "reconstruction"))
    dtype = np.result_type(original, reconstruction, np.float64)
    return original.astype(dtype) - reconstruction.astype(dtype)


def dice(a, b):
    """Dice overlap ``2|A n B| / (|A| + |B|)`` of two binary masks.

    Two empty masks score 1.0; an empty mask against a nonempty one scores 0.0.
    """
    a = as_mask(a).astype(bool)
    b = as_mask(b).astype(bool)
    _check_same_shape(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def normalize(raw):
    """Min-max scale to [0, 1]. A constant array maps to zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise ValidationError("cannot normalize an array containing NaN or Inf")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros(raw.shape, dtype=np.float32)
    out = (raw - lo) / (hi - lo)
    return out.astype(np.float32)
