"""Ground-truth-free segmentation quality estimation from reconstruction residuals."""

from . import attack, core, evaluation, models, train
from .core import dice, difference_image, mask_image, normalize

__version__ = "0.1.0"

__all__ = ["attack", "core", "dice", "difference_image", "evaluation", "mask_image", "models", "normalize",
           "train"]
