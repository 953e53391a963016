"""Reconstruction network, quality regressors and the composed predictors.

Three model families are defined here:

* ``UNet``: encoder/decoder with skip concatenation and a sigmoid output.
  Used as the reconstruction network (masked image in, full image out) and,
  with the same recipe, as the optional segmenter that produces
  under-trained candidate masks.
* ``QualityRegressor``: AlexNet-style stack of strided convolutions followed
  by two hidden fully connected layers and a sigmoid scalar. In ``proposed``
  mode its two input channels are (difference image, candidate mask); in
  ``baseline`` mode they are (input image, candidate mask).

Every model travels as a ``ModelState``: the torch module, a JSON-friendly
architecture descriptor it can be rebuilt from, and training metadata.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import core
from .errors import DimensionError, ValidationError

MODES = ("proposed", "baseline")

DEFAULT_RECNET = {"depth": 4, "base_width": 16}
DEFAULT_REGNET = {"widths": (16, 32, 64, 64, 64), "hidden": (128, 64)}


def _conv_block(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size=3, padding=1),
        nn.ReLU(),
        nn.Conv2d(cout, cout, kernel_size=3, padding=1),
        nn.ReLU(),
    )


class UNet(nn.Module):
    # Downsampling uses strided convolutions rather than max pooling: the
    # masked inputs contain large constant regions where pooling ties would
    # make input gradients ill-defined.
    def __init__(self, depth=4, base_width=16, in_channels=1, out_channels=1):
        super().__init__()
        widths = [base_width * 2**i for i in range(depth)]
        self.encoders = nn.ModuleList()
        self.downs = nn.ModuleList()
        cin = in_channels
        for i, w in enumerate(widths):
            self.encoders.append(_conv_block(cin, w))
            if i < depth - 1:
                self.downs.append(nn.Conv2d(w, w, kernel_size=2, stride=2))
            cin = w
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for w_hi, w_lo in zip(widths[:0:-1], widths[-2::-1]):
            self.ups.append(nn.ConvTranspose2d(w_hi, w_lo, kernel_size=2, stride=2))
            self.decoders.append(_conv_block(2 * w_lo, w_lo))
        self.head = nn.Conv2d(widths[0], out_channels, kernel_size=1)

    def forward(self, x):
        skips = []
        for i, enc in enumerate(self.encoders):
            x = enc(x)
            if i < len(self.downs):
                skips.append(x)
                x = self.downs[i](x)
        for up, dec in zip(self.ups, self.decoders):
            x = dec(torch.cat([up(x), skips.pop()], dim=1))
        return torch.sigmoid(self.head(x))


class QualityRegressor(nn.Module):
    def __init__(self, image_size=64, widths=DEFAULT_REGNET["widths"], hidden=DEFAULT_REGNET["hidden"]):
        super().__init__()
        layers = []
        cin, size = 2, image_size
        for i, w in enumerate(widths):
            k = 5 if i == 0 else 3
            layers += [nn.Conv2d(cin, w, kernel_size=k, stride=2, padding=k // 2), nn.ReLU()]
            cin, size = w, (size + 1) // 2
        self.features = nn.Sequential(*layers)
        fc = []
        fin = cin * size * size
        for h in hidden:
            fc += [nn.Linear(fin, h), nn.ReLU()]
            fin = h
        fc.append(nn.Linear(fin, 1))
        self.head = nn.Sequential(*fc)

    def forward(self, x):
        z = self.features(x).flatten(1)
        return torch.sigmoid(self.head(z)).squeeze(1)


@dataclass
class ModelState:
    arch: dict
    net: nn.Module
    meta: dict = field(default_factory=dict)

    @property
    def kind(self):
        return self.arch["kind"]

    @property
    def image_size(self):
        return self.arch["image_size"]

    def parameters(self):
        """Flat name -> numpy array view of every parameter."""
        return {k: v.detach().cpu().numpy() for k, v in self.net.state_dict().items()}

    def n_parameters(self):
        return sum(p.numel() for p in self.net.parameters())

    def digest(self):
        h = hashlib.sha256(json.dumps(self.arch, sort_keys=True).encode())
        for name, arr in sorted(self.parameters().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return h.hexdigest()


def _build_net(arch):
    if arch["kind"] in ("recnet", "segmenter"):
        return UNet(arch["depth"], arch["base_width"])
    if arch["kind"] == "regnet":
        return QualityRegressor(arch["image_size"], tuple(arch["widths"]), tuple(arch["hidden"]))
    raise ValidationError(f"unknown model kind {arch['kind']!r}")


def _instantiate(arch, seed):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = _build_net(arch)
    net.eval()
    return ModelState(arch=arch, net=net, meta={"epochs_trained": 0, "loss_history": [], "seed": seed})


def _build_unet(kind, depth, base_width, seed, image_size):
    if not 2 <= depth <= 5:
        raise ValidationError(f"depth must be in [2, 5], got {depth}")
    if base_width < 4:
        raise ValidationError(f"base_width must be >= 4, got {base_width}")
    if image_size % 2 ** (depth - 1):
        raise ValidationError(f"image size {image_size} is not divisible by 2**{depth - 1} (depth {depth})")
    arch = {"kind": kind, "depth": depth, "base_width": base_width, "image_size": image_size}
    return _instantiate(arch, seed)


def build_recnet(depth=DEFAULT_RECNET["depth"], base_width=DEFAULT_RECNET["base_width"], seed=0, image_size=64):
    return _build_unet("recnet", depth, base_width, seed, image_size)


def build_segmenter(depth=2, base_width=8, seed=0, image_size=64):
    """U-Net emitting a foreground probability map; see ``segment``."""
    return _build_unet("segmenter", depth, base_width, seed, image_size)


def build_regnet(input_mode="proposed", seed=0, image_size=64, widths=DEFAULT_REGNET["widths"],
                 hidden=DEFAULT_REGNET["hidden"]):
    if input_mode not in MODES:
        raise ValidationError(f"input_mode must be one of {MODES}, got {input_mode!r}")
    arch = {"kind": "regnet", "input_mode": input_mode, "image_size": image_size,
            "widths": list(widths), "hidden": list(hidden)}
    return _instantiate(arch, seed)


def _require(state, kind, mode=None):
    if state.kind != kind:
        raise ValidationError(f"expected a {kind} model, got {state.kind}")
    if mode is not None and state.arch["input_mode"] != mode:
        raise ValidationError(f"expected a regressor in {mode!r} mode, got {state.arch['input_mode']!r}")


def _check_input_shape(state, shape):
    n = state.image_size
    if tuple(shape[-2:]) != (n, n):
        raise DimensionError(f"model expects {n}x{n} inputs, got {tuple(shape[-2:])}")


def _param_dtype(state):
    return next(state.net.parameters()).dtype


def _tensor(arr, state):
    return torch.as_tensor(np.asarray(arr)).to(_param_dtype(state))


def reconstruct_batch(recnet, masked):
    """Reconstruct a stack ``(N, n, n)`` of masked images."""
    _check_input_shape(recnet, masked.shape)
    with torch.no_grad():
        out = recnet.net(_tensor(masked, recnet)[:, None])
    return out[:, 0].numpy()


def reconstruct(recnet, masked):
    _require(recnet, "recnet")
    masked = np.asarray(masked)
    if masked.ndim != 2:
        raise DimensionError(f"expected a 2D image, got shape {masked.shape}")
    return reconstruct_batch(recnet, masked[None])[0]


def regress_batch(regnet, first, seg):
    """Regressor output for stacks of (first channel, mask) pairs."""
    _check_input_shape(regnet, first.shape)
    if first.shape != seg.shape:
        raise DimensionError(f"channel shapes differ: {first.shape} vs {seg.shape}")
    x = torch.stack([_tensor(first, regnet), _tensor(seg, regnet)], dim=1)
    with torch.no_grad():
        return regnet.net(x).numpy()


def predict_quality_batch(recnet, regnet, images, segs):
    _require(recnet, "recnet")
    _require(regnet, "regnet", "proposed")
    segs = np.asarray(segs, dtype=np.uint8)
    masked = np.stack([core.mask_image(im, s) for im, s in zip(images, segs)])
    rec = reconstruct_batch(recnet, masked)
    dif = core.difference_image(images, rec)
    return regress_batch(regnet, dif, segs)


def predict_quality_baseline_batch(regnet, images, segs):
    _require(regnet, "regnet", "baseline")
    return regress_batch(regnet, np.asarray(images), np.asarray(segs, dtype=np.uint8))


def predict_quality(recnet, regnet, image, seg):
    """Predicted Dice of ``seg`` for ``image``: mask, reconstruct, diff, regress."""
    _require(recnet, "recnet")
    _require(regnet, "regnet", "proposed")
    seg = core.as_mask(seg)
    masked = core.mask_image(image, seg)
    rec = reconstruct(recnet, masked)
    dif = core.difference_image(image, rec)
    return float(regress_batch(regnet, dif[None], seg[None])[0])


def predict_quality_baseline(regnet, image, seg):
    _require(regnet, "regnet", "baseline")
    seg = core.as_mask(seg)
    return float(regress_batch(regnet, np.asarray(image)[None], seg[None])[0])


def segment(segmenter, image, threshold=0.5):
    _require(segmenter, "segmenter")
    with torch.no_grad():
        prob = segmenter.net(_tensor(image, segmenter)[None, None])[0, 0].numpy()
    return (prob > threshold).astype(np.uint8)


def save_model(state, path):
    """Write a checkpoint directory: descriptor, parameter index, raw float32 blobs."""
    path = Path(path)
    (path / "params").mkdir(parents=True, exist_ok=True)
    index = {}
    for i, (name, arr) in enumerate(state.parameters().items()):
        fname = f"params/{i:03d}_{name}.f32"
        np.ascontiguousarray(arr, dtype="<f4").tofile(path / fname)
        index[name] = {"file": fname, "shape": list(arr.shape)}
    descriptor = {"arch": state.arch, "meta": state.meta, "digest": state.digest()}
    (path / "model.json").write_text(json.dumps(descriptor, indent=2, sort_keys=True))
    (path / "index.json").write_text(json.dumps(index, indent=2))
    return path


def load_model(path):
    path = Path(path)
    descriptor = json.loads((path / "model.json").read_text())
    index = json.loads((path / "index.json").read_text())
    arch = descriptor["arch"]
    net = _build_net(arch)
    tensors = {}
    for name, entry in index.items():
        arr = np.fromfile(path / entry["file"], dtype="<f4").reshape(entry["shape"])
        tensors[name] = torch.from_numpy(arr.astype(np.float32))
    net.load_state_dict(tensors)
    net.eval()
    return ModelState(arch=arch, net=net, meta=descriptor["meta"])
