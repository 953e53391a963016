"""Training loops for the reconstruction network, the regressors and the segmenter.

The reconstruction network only ever sees (image, ground-truth mask) pairs.
Regressors learn Dice from the quality corpus; in proposed mode the frozen
reconstruction network turns each (image, candidate) pair into a difference
image once, before the first epoch.
"""

import copy
import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import core
from .data.storage import DatasetManifest, load_samples, read_array, stack
from .errors import MissingArtifactError, ValidationError
from .models import _require, reconstruct_batch, save_model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    optimizer: str = "adam"
    early_stop_patience: int = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def digest(self):
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def _gt_pairs_from_manifest(manifest, split):
    seen, images, gts = set(), [], []
    for r in manifest.split(split):
        if r.image in seen:
            continue
        seen.add(r.image)
        images.append(read_array(manifest.resolve(r.image)))
        gts.append(read_array(manifest.resolve(r.seg_gt)))
    return images, gts


def _gt_pairs(data, split):
    """(images, ground-truth masks) for a split; candidate masks are never touched."""
    if isinstance(data, DatasetManifest):
        images, gts = _gt_pairs_from_manifest(data, split)
    else:
        samples = data.get(split, [])
        images = [s.image for s in samples]
        gts = [s.seg_gt for s in samples]
    if not images:
        return np.zeros((0, 0, 0), np.float32), np.zeros((0, 0, 0), np.uint8)
    return np.stack(images).astype(np.float32), np.stack(gts).astype(np.uint8)


def _quality_split(data, split):
    if isinstance(data, DatasetManifest):
        samples = load_samples(data, split)
    else:
        samples = list(data.get(split, []))
    if not samples:
        return None
    return stack(samples)


def _make_optimizer(net, config):
    if config.optimizer == "adam":
        return torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    return torch.optim.SGD(net.parameters(), lr=config.learning_rate, momentum=0.9)


def _epoch_order(n, seed, epoch):
    return np.random.default_rng([seed, epoch]).permutation(n)


def _fit(state, loss_fn, n_train, n_val, config, run_dir=None, val_metric=None):
    """Shared loop: seeded shuffles, per-epoch validation, best-val selection."""
    model = copy.deepcopy(state)
    net = model.net
    opt = _make_optimizer(net, config)
    history = list(model.meta.get("loss_history", []))
    start = model.meta.get("epochs_trained", 0)
    best = (np.inf, None, start)
    stale = 0
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(asdict(config), indent=2, sort_keys=True))
    for epoch in range(start + 1, start + config.epochs + 1):
        net.train()
        order = _epoch_order(n_train, config.seed, epoch)
        total = 0.0
        for lo in range(0, n_train, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            loss = loss_fn(net, idx, "train")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        net.eval()
        train_loss = total / n_train
        val_loss = _evaluate(net, loss_fn, n_val) if n_val else train_loss
        row = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss}
        if val_metric is not None and n_val:
            row["val_mae"] = val_metric(net)
        history.append(row)
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        model.meta.update(epochs_trained=epoch, loss_history=history)
        if run_dir is not None:
            save_model(model, run_dir / "checkpoints" / f"epoch_{epoch:03d}")
        if val_loss < best[0]:
            best = (val_loss, copy.deepcopy(net.state_dict()), epoch)
            stale = 0
        else:
            stale += 1
            if config.early_stop_patience is not None and stale >= config.early_stop_patience:
                break
    if best[1] is not None:
        net.load_state_dict(best[1])
    model.meta.update(best_epoch=best[2], seed=config.seed, config_hash=config.digest(),
                      loss_history=history)
    if run_dir is not None:
        save_model(model, run_dir / "best")
        keys = ["epoch", "train_loss", "val_loss"] + (["val_mae"] if history and "val_mae" in history[0] else [])
        with open(run_dir / "metrics.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
            w.writeheader()
            w.writerows(history)
    return model


def _evaluate(net, loss_fn, n, batch=64):
    total = 0.0
    with torch.no_grad():
        for lo in range(0, n, batch):
            idx = np.arange(lo, min(lo + batch, n))
            total += loss_fn(net, idx, "val").item() * len(idx)
    return total / n


def train_recnet(model, data, config, run_dir=None):
    """Fit the reconstruction network on ground-truth-masked images.

    ``data`` is a DatasetManifest or a ``{split: [QualitySample, ...]}``
    mapping. Only ``image`` and ``seg_gt`` are read. The loss is the mean
    squared error between the reconstruction of ``image * (1 - seg_gt)`` and
    ``image``. The returned state holds the weights of the epoch with the
    lowest validation loss.
    """
    _require(model, "recnet")
    x_train, s_train = _gt_pairs(data, "train")
    if len(x_train) == 0:
        raise ValidationError("train split is empty")
    x_val, s_val = _gt_pairs(data, "val")
    tensors = {
        "train": (torch.from_numpy(x_train * (1 - s_train)), torch.from_numpy(x_train)),
        "val": (torch.from_numpy(x_val * (1 - s_val)), torch.from_numpy(x_val)),
    }

    def loss_fn(net, idx, split):
        masked, target = tensors[split]
        idx = torch.from_numpy(np.asarray(idx))
        return F.mse_loss(net(masked[idx, None]), target[idx, None])

    return _fit(model, loss_fn, len(x_train), len(x_val), config, run_dir)


def regressor_inputs(regnet, recnet, images, cands, batch=64):
    """First input channel for each pair: difference image (proposed) or image (baseline)."""
    if regnet.arch["input_mode"] == "baseline":
        return np.asarray(images, dtype=np.float32)
    out = np.empty(np.shape(images), dtype=np.float32)
    for lo in range(0, len(images), batch):
        im, sg = images[lo:lo + batch], cands[lo:lo + batch]
        rec = reconstruct_batch(recnet, im * (1 - sg))
        out[lo:lo + batch] = core.difference_image(im, rec)
    return out


def train_regressor(model, recnet, corpus, config, run_dir=None):
    """Fit a regressor to the corpus Dice labels with a mean squared error loss.

    ``recnet`` is required in proposed mode and is never updated.
    """
    _require(model, "regnet")
    mode = model.arch["input_mode"]
    if mode == "proposed":
        if recnet is None:
            raise MissingArtifactError("a trained REC-Net for proposed-mode regression", "train-rec")
        _require(recnet, "recnet")
    splits = {}
    for split in ("train", "val"):
        st = _quality_split(corpus, split)
        if st is None:
            continue
        images, cands, _, dice = st
        first = regressor_inputs(model, recnet, images, cands)
        x = torch.from_numpy(np.stack([first, cands.astype(np.float32)], axis=1))
        splits[split] = (x, torch.from_numpy(dice.astype(np.float32)))
    if "train" not in splits:
        raise ValidationError("train split is empty")

    def loss_fn(net, idx, split):
        x, y = splits[split]
        idx = torch.from_numpy(np.asarray(idx))
        return F.mse_loss(net(x[idx]), y[idx])

    def val_mae(net):
        x, y = splits["val"]
        with torch.no_grad():
            return float((net(x) - y).abs().mean())

    n_val = len(splits["val"][1]) if "val" in splits else 0
    if recnet is not None:
        model.meta["recnet_digest"] = recnet.digest()
    return _fit(model, loss_fn, len(splits["train"][1]), n_val, config, run_dir, val_metric=val_mae)


def train_segmenter(model, data, config, run_dir=None):
    """Binary cross-entropy fit of the segmenter; stop early to get imperfect masks."""
    _require(model, "segmenter")
    tensors = {}
    for split in ("train", "val"):
        x, s = _gt_pairs(data, split)
        tensors[split] = (torch.from_numpy(x), torch.from_numpy(s.astype(np.float32)))
    n_train = len(tensors["train"][0])
    if n_train == 0:
        raise ValidationError("train split is empty")

    def loss_fn(net, idx, split):
        x, s = tensors[split]
        idx = torch.from_numpy(np.asarray(idx))
        prob = net(x[idx, None]).clamp(1e-6, 1 - 1e-6)
        return F.binary_cross_entropy(prob, s[idx, None])

    return _fit(model, loss_fn, n_train, len(tensors["val"][0]), config, run_dir)

