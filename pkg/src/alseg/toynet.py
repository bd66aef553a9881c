"""A small U-shaped encoder-decoder for binary segmentation, trained with
plain SGD and sampled with Monte Carlo dropout.

The family is parameterised by encoder depth, base width, decoder width
multiplier, skip connections and dropout placement, which is enough to give
the random search a non-trivial cartesian space to walk over.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .errors import ParameterError, ShapeError, StateError
from .rng import RngStream

DEFAULT_MC_SAMPLES = 30
DEFAULT_EPOCHS = 30
# SGD steps on LOSS_SCALE x (mean pixel loss); see train()
LOSS_SCALE = 256.0
# global-norm clip on the scaled gradient; tames rare high-loss batches that
# otherwise kill every unit feeding the head
CLIP_NORM = 500.0


class Placement(str, enum.Enum):
    HEAD_ONLY = "HeadOnly"
    FULL_DECODER = "FullDecoder"
    NONE = "None"


class Mode(str, enum.Enum):
    TRAIN = "Train"
    EVAL = "Eval"
    MC_DROPOUT = "McDropout"


@dataclass(frozen=True)
class NetConfig:
    encoder_depth: int = 3
    base_channels: int = 8
    decoder_width_mult: int = 1
    dropout_placement: Placement = Placement.HEAD_ONLY
    dropout_rate: float = 0.5
    num_classes: int = 2
    skip: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dropout_placement", Placement(self.dropout_placement))
        if not 3 <= self.encoder_depth <= 5:
            raise ParameterError(f"encoder_depth must be in [3, 5], got {self.encoder_depth}")
        if self.base_channels < 1:
            raise ParameterError("base_channels must be positive")
        if self.decoder_width_mult < 1:
            raise ParameterError("decoder_width_mult must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.num_classes < 2:
            raise ParameterError("num_classes must be >= 2")

    def with_placement(self, placement: Placement | str) -> "NetConfig":
        d = asdict(self)
        d["dropout_placement"] = Placement(placement)
        return NetConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dropout_placement"] = self.dropout_placement.value
        return d

    def encoder_channels(self, stage: int) -> int:
        return self.base_channels * 2 ** stage

    def decoder_channels(self, stage: int) -> int:
        return self.base_channels * 2 ** stage * self.decoder_width_mult


@dataclass
class Model:
    config: NetConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})


def _layer_shapes(cfg: NetConfig) -> dict[str, tuple[int, int]]:
    """(out_channels, in_channels) for every conv layer, in forward order."""
    shapes = {}
    in_c = 1
    for s in range(cfg.encoder_depth):
        shapes[f"enc{s}"] = (cfg.encoder_channels(s), in_c)
        in_c = cfg.encoder_channels(s)
    for s in reversed(range(cfg.encoder_depth)):
        skip_c = cfg.encoder_channels(s) if cfg.skip else 0
        shapes[f"dec{s}"] = (cfg.decoder_channels(s), in_c + skip_c)
        in_c = cfg.decoder_channels(s)
    shapes["head"] = (cfg.num_classes, in_c)
    return shapes


def build_model(config: NetConfig, init_stream: RngStream) -> Model:
    gen = init_stream.generator()
    params = {}
    for name, (out_c, in_c) in _layer_shapes(config).items():
        std = np.sqrt(2.0 / (in_c * 9))
        params[f"{name}.w"] = gen.normal(0.0, std, size=(out_c, in_c, 3, 3))
        params[f"{name}.b"] = np.zeros(out_c)
    return Model(config, params)


def _row_dropout(x, rate, gens):
    mask = np.stack([tc.dropout_mask(x.shape[1:], rate, g) for g in gens])
    return x * mask, mask


def _encode(model: Model, x: np.ndarray, cache: list[tuple]):
    skips = []
    p = model.params
    for s in range(model.config.encoder_depth):
        name = f"enc{s}"
        z = tc.conv2d(x, p[f"{name}.w"], p[f"{name}.b"])
        a = tc.relu(z)
        cache.append(("conv", name, x))
        cache.append(("relu", z))
        skips.append(a)
        x, idx = tc.maxpool2(a)
        cache.append(("pool", idx, s))
    return skips, x


def encoder_features(model: Model, x: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Pre-pool output of every encoder stage, and the bottleneck."""
    return _encode(model, np.asarray(x, dtype=np.float64), [])


def _forward(model: Model, x: np.ndarray, mode: Mode, stream: RngStream | None, tile: int = 1):
    """Run the network and keep what the backward pass needs.

    With ``tile > 1`` (single-image input) the deterministic prefix runs once
    and the activation is replicated ``tile`` times right before the first
    dropout, so row ``t`` of the output is the pass keyed by draw index ``t``.
    """
    cfg = model.config
    p = model.params
    x = np.asarray(x, dtype=np.float64)
    tc._check_4d(x)
    n, _, h, w = x.shape
    f = 2 ** cfg.encoder_depth
    if h % f or w % f:
        raise ShapeError(f"input {h}x{w} is not divisible by 2^{cfg.encoder_depth}")
    if tile > 1 and n != 1:
        raise ShapeError("tiling needs a single-image batch")

    use_dropout = mode is not Mode.EVAL and cfg.dropout_placement is not Placement.NONE and cfg.dropout_rate > 0
    rows = tile if tile > 1 else n
    gens = None
    if use_dropout:
        if stream is None:
            raise ParameterError(f"mode {mode.value} needs an RngStream")
        gens = [stream.draw(i).generator() for i in range(rows)]

    cache: list[tuple] = []
    skips, x = _encode(model, x, cache)

    def maybe_drop(v):
        if v.shape[0] != rows:
            v = np.repeat(v, rows, axis=0)
            cache.append(("tile",))
        v, mask = _row_dropout(v, cfg.dropout_rate, gens)
        cache.append(("drop", mask))
        return v

    for s in reversed(range(cfg.encoder_depth)):
        name = f"dec{s}"
        x = tc.upsample2(x)
        cache.append(("up",))
        if cfg.skip:
            sk = skips[s]
            if sk.shape[0] != x.shape[0]:
                sk = np.repeat(sk, x.shape[0], axis=0)
            cache.append(("cat", x.shape[1], s))
            x = np.concatenate([x, sk], axis=1)
        z = tc.conv2d(x, p[f"{name}.w"], p[f"{name}.b"])
        cache.append(("conv", name, x))
        x = tc.relu(z)
        cache.append(("relu", z))
        if use_dropout and cfg.dropout_placement is Placement.FULL_DECODER:
            x = maybe_drop(x)

    logits = tc.conv2d(x, p["head.w"], p["head.b"])
    cache.append(("conv", "head", x))
    if use_dropout:
        logits = maybe_drop(logits)
    elif tile > 1:
        logits = np.repeat(logits, tile, axis=0)
    return logits, cache


def _backward(model: Model, cache: list[tuple], dlogits: np.ndarray) -> dict[str, np.ndarray]:
    grads = {}
    skip_grads: dict[int, np.ndarray] = {}
    d = dlogits
    for entry in reversed(cache):
        kind = entry[0]
        if kind == "conv":
            _, name, inp = entry
            need = name != "enc0"
            dx, dw, db = tc.conv2d_backward(d, inp, model.params[f"{name}.w"], need_input_grad=need)
            grads[f"{name}.w"] = dw
            grads[f"{name}.b"] = db
            d = dx
            if not need:
                break
        elif kind == "relu":
            d = tc.relu_backward(d, entry[1])
        elif kind == "drop":
            d = d * entry[1]
        elif kind == "up":
            d = tc.upsample2_backward(d)
        elif kind == "cat":
            _, split, s = entry
            skip_grads[s] = d[:, split:]
            d = d[:, :split]
        elif kind == "pool":
            _, idx, s = entry
            d = tc.maxpool2_backward(d, idx)
            if s in skip_grads:
                d = d + skip_grads.pop(s)
        elif kind == "tile":
            raise StateError("backward through a tiled forward is not supported")
    return grads


def forward(model: Model, batch: np.ndarray, mode: Mode | str = Mode.EVAL,
            stream: RngStream | None = None) -> np.ndarray:
    logits, _ = _forward(model, batch, Mode(mode), stream)
    return logits


def loss_and_grads(model: Model, images: np.ndarray, masks: np.ndarray,
                   mode: Mode | str = Mode.TRAIN, stream: RngStream | None = None):
    """Mean pixel cross-entropy of ``softmax(forward(...))`` and its parameter gradients."""
    logits, cache = _forward(model, images, Mode(mode), stream)
    probs = tc.softmax_channels(logits)
    loss = tc.cross_entropy_loss(probs, masks)
    grads = _backward(model, cache, tc.softmax_cross_entropy_backward(probs, masks))
    return loss, grads


def train(model: Model, images: np.ndarray, masks: np.ndarray, epochs: int = DEFAULT_EPOCHS,
          lr: float = 4e-4, batch_size: int = 4, stream: RngStream | None = None,
          augment: bool = False) -> list[float]:
    """Plain minibatch SGD. Returns the mean training loss of every epoch.

    The update is ``lr * LOSS_SCALE * grad`` of the mean pixel loss, with the
    scaled gradient clipped to global norm ``CLIP_NORM``. Without the
    multiplier the learning-rate grid (1e-6 .. 4e-4) barely moves plain SGD;
    the reported loss is the unscaled pixel mean.
    """
    if len(images) == 0:
        raise StateError("cannot train on an empty dataset")
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    if epochs < 0:
        raise ParameterError("epochs must be >= 0")
    stream = stream or RngStream(0, "train")
    images = np.asarray(images, dtype=np.float64)
    masks = np.asarray(masks)
    n = len(images)
    trace = []
    for epoch in range(epochs):
        order = stream.child("shuffle", phase=epoch).generator().permutation(n)
        total = 0.0
        for step, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            xb, yb = images[idx], masks[idx]
            if augment:
                from .synthdata import augment_arrays
                xb, yb = augment_arrays(xb, yb, stream.child("augment", phase=epoch, item_id=step))
            step_stream = stream.child("dropout", phase=epoch, item_id=step)
            loss, grads = loss_and_grads(model, xb, yb, Mode.TRAIN, step_stream)
            norm = LOSS_SCALE * np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
            scale = lr * LOSS_SCALE * min(1.0, CLIP_NORM / norm) if norm > 0 else 0.0
            for k, g in grads.items():
                model.params[k] -= scale * g
            total += loss * len(idx)
        trace.append(total / n)
    return trace


def mc_inference(model: Model, image: np.ndarray, T: int = DEFAULT_MC_SAMPLES,
                 stream: RngStream | None = None) -> np.ndarray:
    """T stochastic forward passes of one image. Returns a T x C x H x W probability stack."""
    if T < 1:
        raise ParameterError(f"T must be >= 1, got {T}")
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None, None]
    elif image.ndim == 3:
        image = image[None]
    stream = stream or RngStream(0, "mc")
    logits, _ = _forward(model, image, Mode.MC_DROPOUT, stream, tile=T)
    return tc.softmax_channels(logits)


def predict_logits(model: Model, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Eval-mode logits, computed in chunks."""
    images = np.asarray(images, dtype=np.float64)
    out = [forward(model, images[i:i + batch_size], Mode.EVAL) for i in range(0, len(images), batch_size)]
    return np.concatenate(out, axis=0)


# --- checkpoints -------------------------------------------------------------

def save_model(model: Model, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": model.config.to_dict(),
        "parameters": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for k, v in model.params.items():
        tc.dump_tensor(v, out_dir / k)


def load_model(in_dir: str | Path) -> Model:
    in_dir = Path(in_dir)
    manifest = json.loads((in_dir / "manifest.json").read_text())
    cfg = NetConfig(**manifest["config"])
    params = {}
    for entry in manifest["parameters"]:
        t = tc.load_tensor(in_dir / entry["name"])
        if list(t.shape) != entry["shape"]:
            raise ShapeError(f"parameter {entry['name']} has shape {t.shape}, manifest says {entry['shape']}")
        params[entry["name"]] = t
    return Model(cfg, params)
