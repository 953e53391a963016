import logging

import numpy as np
import pytest

nib = pytest.importorskip("nibabel")

from segqa.data import load_samples  # noqa: E402
from segqa.data.acdc import center_crop_or_pad, ingest_acdc  # noqa: E402
from segqa.data.storage import check_disjoint  # noqa: E402
from segqa.errors import IngestionError  # noqa: E402


def _write_patient(root, pid, n_slices=4, lvm_slices=(1, 2), shape=(80, 70)):
    pdir = root / pid
    pdir.mkdir(parents=True)
    rng = np.random.default_rng(int(pid[-3:]))
    img = rng.random(shape + (n_slices,)) * 500
    lab = np.zeros(shape + (n_slices,), np.uint8)
    cy, cx = shape[0] // 2, shape[1] // 2
    for z in lvm_slices:
        lab[cy - 8:cy + 8, cx - 8:cx + 8, z] = 2
        lab[cy - 4:cy + 4, cx - 4:cx + 4, z] = 3
    for frame in ("frame01", "frame12"):
        nib.save(nib.Nifti1Image(img, np.eye(4)), pdir / f"{pid}_{frame}.nii.gz")
        nib.save(nib.Nifti1Image(lab, np.eye(4)), pdir / f"{pid}_{frame}_gt.nii.gz")


@pytest.fixture
def acdc_root(tmp_path):
    root = tmp_path / "acdc"
    for i in range(1, 8):
        _write_patient(root, f"patient{i:03d}")
    _write_patient(root, "patient099", lvm_slices=())
    return root


def test_ingest_extracts_lvm_slices(acdc_root, tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        m = ingest_acdc(acdc_root, 2, split_seed=1, out_dir=tmp_path / "out", size=64)
    assert "patient099" in caplog.text
    patients = {r.source_id for r in m.records}
    assert "patient099" not in patients and len(patients) == 7
    # 2 frames x 2 labelled slices per patient; empty-label slices dropped
    assert len(m.records) == 7 * 4
    check_disjoint(m)
    for s in load_samples(m):
        assert s.image.shape == (64, 64)
        assert s.seg_gt.any()
        assert 0 <= s.image.min() and s.image.max() <= 1
        assert s.seg_gt.sum() == 16 * 16 - 8 * 8


def test_ingest_deterministic(acdc_root, tmp_path):
    a = ingest_acdc(acdc_root, 2, 3, tmp_path / "a", 64)
    b = ingest_acdc(acdc_root, 2, 3, tmp_path / "b", 64)
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    assert a.records == b.records


def test_missing_image_names_file(acdc_root, tmp_path):
    victim = acdc_root / "patient002" / "patient002_frame12.nii.gz"
    victim.unlink()
    with pytest.raises(IngestionError, match="patient002_frame12"):
        ingest_acdc(acdc_root, 2, 0, tmp_path / "out", 64)


def test_corrupt_volume_names_file(acdc_root, tmp_path):
    victim = acdc_root / "patient003" / "patient003_frame01_gt.nii.gz"
    victim.write_bytes(b"not a nifti file")
    with pytest.raises(IngestionError, match="patient003_frame01_gt"):
        ingest_acdc(acdc_root, 2, 0, tmp_path / "out", 64)


def test_center_crop_or_pad():
    a = np.arange(36).reshape(6, 6)
    np.testing.assert_array_equal(center_crop_or_pad(a, 2), [[14, 15], [20, 21]])
    padded = center_crop_or_pad(a, 10)
    assert padded.shape == (10, 10)
    np.testing.assert_array_equal(padded[2:8, 2:8], a)
    assert padded.sum() == a.sum()
