"""On-disk layout for samples and manifests.

Each array is a raw little-endian C-order file (``.f32`` for images, ``.u8``
for masks) next to a JSON sidecar ``{"shape": [n, n], "dtype": ...}``.
A manifest is one JSON file; every path in it is relative to the manifest's
directory.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import core
from ..errors import ValidationError

SPLITS = ("train", "val", "test")

_DTYPES = {"float32": ("<f4", ".f32"), "uint8": ("|u1", ".u8")}


def write_array(path, arr):
    """Write ``arr`` to ``path`` (suffix chosen by dtype); return the data file path."""
    arr = np.asarray(arr)
    dtype = "float32" if np.issubdtype(arr.dtype, np.floating) else "uint8"
    code, suffix = _DTYPES[dtype]
    path = Path(path).with_suffix(suffix)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(arr, dtype=code).tofile(path)
    sidecar = {"shape": list(arr.shape), "dtype": dtype}
    path.with_suffix(".json").write_text(json.dumps(sidecar))
    return path


def read_array(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    code, _ = _DTYPES[meta["dtype"]]
    arr = np.fromfile(path, dtype=code).reshape(meta["shape"])
    return arr.astype(np.float32 if meta["dtype"] == "float32" else np.uint8)


@dataclass
class Record:
    id: str
    source_id: str
    split: str
    image: str
    seg_gt: str
    seg_candidate: str
    gt_dice: float
    degradation: list = None


@dataclass
class QualitySample:
    """One (image, candidate, ground truth, Dice) record loaded into memory."""

    image: np.ndarray
    seg_candidate: np.ndarray
    seg_gt: np.ndarray
    gt_dice: float
    source_id: str
    sample_id: str = ""


@dataclass
class DatasetManifest:
    records: list
    seed: int
    generator_config: dict = field(default_factory=dict)
    kind: str = "source"
    root: Path = None

    def split(self, name):
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def source_ids(self, split):
        return {r.source_id for r in self.split(split)}

    def to_dict(self):
        return {
            "kind": self.kind,
            "seed": self.seed,
            "generator_config": self.generator_config,
            "records": [asdict(r) for r in self.records],
        }

    def save(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        self.root = path.parent
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        raw = json.loads(path.read_text())
        records = [Record(**r) for r in raw["records"]]
        return cls(records=records, seed=raw["seed"], generator_config=raw["generator_config"],
                   kind=raw["kind"], root=path.parent)

    def resolve(self, rel):
        return Path(self.root) / rel


def check_disjoint(manifest):
    ids = [manifest.source_ids(s) for s in SPLITS]
    for i in range(len(SPLITS)):
        for j in range(i + 1, len(SPLITS)):
            shared = ids[i] & ids[j]
            if shared:
                raise ValidationError(
                    f"source ids shared by {SPLITS[i]} and {SPLITS[j]}: {sorted(shared)[:5]}")


def load_sample(manifest, record, cache=None):
    def read(rel):
        if cache is None:
            return read_array(manifest.resolve(rel))
        if rel not in cache:
            cache[rel] = read_array(manifest.resolve(rel))
        return cache[rel]

    image = read(record.image)
    gt = read(record.seg_gt)
    cand = read(record.seg_candidate)
    d = core.dice(cand, gt)
    if d != record.gt_dice:
        raise ValidationError(f"{record.id}: stored gt_dice {record.gt_dice!r} != recomputed {d!r}")
    return QualitySample(image=image, seg_candidate=cand, seg_gt=gt, gt_dice=d,
                         source_id=record.source_id, sample_id=record.id)


def load_samples(manifest, split=None):
    """Load every record (or one split), re-verifying each stored Dice."""
    records = manifest.records if split is None else manifest.split(split)
    cache = {}
    return [load_sample(manifest, r, cache) for r in records]


def stack(samples):
    """Stack samples into ``(images, candidates, ground truths, dice)`` arrays."""
    images = np.stack([s.image for s in samples]).astype(np.float32)
    cands = np.stack([s.seg_candidate for s in samples]).astype(np.uint8)
    gts = np.stack([s.seg_gt for s in samples]).astype(np.uint8)
    dice = np.array([s.gt_dice for s in samples], dtype=np.float64)
    return images, cands, gts, dice


def assign_splits(source_ids, seed, fractions=(0.7, 0.15, 0.15)):
    """Map each source id to a split, shuffling with ``seed``."""
    ids = sorted(set(source_ids))
    order = np.random.default_rng(seed).permutation(len(ids))
    n = len(ids)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n >= 3:
        n_train = min(max(n_train, 1), n - 2)
        n_val = min(max(n_val, 1), n - n_train - 1)
    out = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            out[ids[idx]] = "train"
        elif rank < n_train + n_val:
            out[ids[idx]] = "val"
        else:
            out[ids[idx]] = "test"
    return out
