"""Slice extraction from the ACDC cardiac cine-MRI challenge data.

Expected layout (as distributed)::

    root/patient001/patient001_frame01.nii.gz
    root/patient001/patient001_frame01_gt.nii.gz
    ...

Every labelled frame is split into 2D short-axis slices; slices with an
empty target label are dropped. Slices are cropped or zero-padded about the
image centre to ``size x size`` and min-max normalized.
"""

import logging
import re
from pathlib import Path

import numpy as np

from .. import core
from ..errors import IngestionError, ValidationError
from .storage import DatasetManifest, Record, assign_splits, write_array

log = logging.getLogger(__name__)

LVM_LABEL = 2
_GT_PATTERN = re.compile(r"^(?P<patient>patient\d+)_(?P<frame>frame\d+)_gt\.nii(\.gz)?$")


def center_crop_or_pad(arr, size):
    """Crop or zero-pad both axes symmetrically about the array centre."""
    out = np.zeros((size, size), dtype=arr.dtype)
    h, w = arr.shape
    sy, dy = max((h - size) // 2, 0), max((size - h) // 2, 0)
    sx, dx = max((w - size) // 2, 0), max((size - w) // 2, 0)
    ch, cw = min(h, size), min(w, size)
    out[dy:dy + ch, dx:dx + cw] = arr[sy:sy + ch, sx:sx + cw]
    return out


def _load_volume(path):
    import nibabel as nib
    try:
        return np.asarray(nib.load(str(path)).dataobj)
    except Exception as exc:
        raise IngestionError(f"cannot read volume {path}: {exc}") from exc


def find_labelled_frames(root):
    """Yield ``(patient, frame, image_path, label_path)`` sorted by name."""
    root = Path(root)
    for gt_path in sorted(root.rglob("*_gt.nii*")):
        m = _GT_PATTERN.match(gt_path.name)
        if not m:
            continue
        suffix = ".nii.gz" if gt_path.name.endswith(".gz") else ".nii"
        img_path = gt_path.with_name(f"{m['patient']}_{m['frame']}{suffix}")
        if not img_path.exists():
            raise IngestionError(f"missing image volume {img_path} for label {gt_path}")
        yield m["patient"], m["frame"], img_path, gt_path


def ingest_acdc(root_path, structure=LVM_LABEL, split_seed=0, out_dir=None, size=128,
                fractions=(0.7, 0.15, 0.15)):
    """Extract 2D slices containing ``structure`` and write samples plus manifest.

    The split is made over patients. Patients without any slice containing
    the structure are skipped with a warning.
    """
    if out_dir is None:
        raise ValidationError("out_dir is required")
    root = Path(root_path)
    if not root.is_dir():
        raise IngestionError(f"data root {root} is not a directory")
    out_dir = Path(out_dir)

    per_patient = {}
    for patient, frame, img_path, gt_path in find_labelled_frames(root):
        image = _load_volume(img_path)
        label = _load_volume(gt_path)
        if image.shape != label.shape or image.ndim != 3:
            raise IngestionError(f"{gt_path}: label shape {label.shape} does not match image {image.shape}")
        slices = per_patient.setdefault(patient, [])
        for z in range(image.shape[2]):
            mask = (label[:, :, z] == structure).astype(np.uint8)
            if not mask.any():
                continue
            mask = center_crop_or_pad(mask, size)
            if not mask.any():
                log.warning("%s %s slice %d: target cropped away at size %d", patient, frame, z, size)
                continue
            img = center_crop_or_pad(image[:, :, z].astype(np.float64), size)
            slices.append((f"{patient}_{frame}_z{z:02d}", core.normalize(img), mask))

    for patient in [p for p, s in per_patient.items() if not s]:
        log.warning("%s: no slices containing label %d, patient skipped", patient, structure)
        del per_patient[patient]
    if not per_patient:
        raise IngestionError(f"no slices with label {structure} found under {root}")

    splits = assign_splits(per_patient, split_seed, fractions)
    records = []
    for patient in sorted(per_patient):
        for sid, img, mask in per_patient[patient]:
            img_path = write_array(out_dir / "samples" / sid / "image", img)
            gt_path = write_array(out_dir / "samples" / sid / "seg_gt", mask)
            rel_gt = str(gt_path.relative_to(out_dir))
            records.append(Record(id=sid, source_id=patient, split=splits[patient],
                                  image=str(img_path.relative_to(out_dir)), seg_gt=rel_gt,
                                  seg_candidate=rel_gt, gt_dice=1.0))
    config = {"generator": "acdc", "structure": structure, "image_size": size, "fractions": list(fractions),
              "patients": len(per_patient)}
    manifest = DatasetManifest(records=records, seed=split_seed, generator_config=config, kind="source")
    manifest.save(out_dir / "manifest.json")
    return manifest
