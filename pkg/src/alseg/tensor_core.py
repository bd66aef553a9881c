"""Dense float64 tensors and the handful of differentiable primitives the
segmentation network is built from.

Tensors are plain ``numpy.ndarray`` objects in (N, C, H, W) layout. Each
differentiable op comes as a forward function plus an explicit ``*_backward``
that maps the upstream gradient to gradients of its inputs. There is no
autodiff graph; callers keep whatever the backward pass needs.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import LabelError, ParameterError, ShapeError
from .rng import RngStream

Tensor = np.ndarray

EPS = 1e-12


def as_tensor(x) -> Tensor:
    t = np.ascontiguousarray(x, dtype=np.float64)
    if t.size and not np.all(np.isfinite(t)):
        raise ValueError("tensor contains NaN or Inf")
    return t


def _check_4d(x: Tensor, name: str = "input") -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N, C, H, W), got shape {x.shape}")


def _im2col(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (C*9, N*H*W) patches for a 3x3 kernel with padding 1."""
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2, w + 2))
    xp[:, :, 1:-1, 1:-1] = x
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # N, C, H, W, 3, 3
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * 9, n * h * w)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """3x3 cross-correlation, zero padding 1, stride 1 (same-size output)."""
    _check_4d(x)
    if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ShapeError(f"kernel must be OutC x InC x 3 x 3, got {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"channel mismatch: input has {x.shape[1]}, kernel expects {kernel.shape[1]}")
    if bias.shape != (kernel.shape[0],):
        raise ShapeError(f"bias must have length {kernel.shape[0]}, got {bias.shape}")
    n, _, h, w = x.shape
    out_c = kernel.shape[0]
    out = kernel.reshape(out_c, -1) @ _im2col(x) + bias[:, None]
    return np.ascontiguousarray(out.reshape(out_c, n, h, w).transpose(1, 0, 2, 3))


def conv2d_backward(dout: Tensor, x: Tensor, kernel: Tensor, need_input_grad: bool = True):
    """Gradients of ``conv2d`` w.r.t. (input, kernel, bias).

    The input gradient is a full correlation with the flipped, channel-swapped
    kernel, which for 3x3/pad-1 is again a same-size ``conv2d``.
    """
    out_c = kernel.shape[0]
    d2 = dout.transpose(1, 0, 2, 3).reshape(out_c, -1)
    dk = (d2 @ _im2col(x).T).reshape(kernel.shape)
    db = d2.sum(axis=1)
    dx = None
    if need_input_grad:
        flipped = np.ascontiguousarray(kernel.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        dx = conv2d(dout, flipped, np.zeros(kernel.shape[1]))
    return dx, dk, db


def maxpool2(x: Tensor):
    """2x2 non-overlapping max pool. Returns (output, argmax within each window)."""
    _check_4d(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even H and W, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2_backward(dout: Tensor, idx: Tensor) -> Tensor:
    n, c, h2, w2 = dout.shape
    dwin = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2 * 2, w2 * 2)


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    _check_4d(x)
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(dout: Tensor) -> Tensor:
    n, c, h, w = dout.shape
    return dout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0.0)


def relu_backward(dout: Tensor, x: Tensor) -> Tensor:
    return dout * (x > 0)


def softmax_channels(logits: Tensor) -> Tensor:
    _check_4d(logits, "logits")
    if logits.shape[1] < 2:
        raise ShapeError("softmax over channels needs C >= 2")
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_channels_backward(dout: Tensor, probs: Tensor) -> Tensor:
    return probs * (dout - (dout * probs).sum(axis=1, keepdims=True))


def dropout_mask(shape, rate: float, gen: np.random.Generator) -> Tensor:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    keep = gen.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x: Tensor, rate: float, rng_stream: RngStream | np.random.Generator):
    """Apply inverted dropout. Returns (output, mask); backward is ``dout * mask``."""
    gen = rng_stream.generator() if isinstance(rng_stream, RngStream) else rng_stream
    mask = dropout_mask(x.shape, rate, gen)
    return x * mask, mask


def _check_target(probs: Tensor, target: np.ndarray) -> None:
    _check_4d(probs, "probs")
    n, c, h, w = probs.shape
    if target.shape != (n, h, w):
        raise ShapeError(f"target shape {target.shape} does not match probs {probs.shape}")
    if target.min() < 0 or target.max() >= c:
        raise LabelError(f"target labels must lie in 0..{c - 1}")


def cross_entropy_loss(probs: Tensor, target: np.ndarray) -> float:
    """Mean over all pixels of -ln(p[target] + eps)."""
    target = np.asarray(target)
    _check_target(probs, target)
    picked = np.take_along_axis(probs, target[:, None].astype(np.intp), axis=1)
    return float(-np.log(picked + EPS).mean())


def cross_entropy_backward(probs: Tensor, target: np.ndarray) -> Tensor:
    """Gradient of ``cross_entropy_loss`` w.r.t. ``probs``."""
    target = np.asarray(target)
    _check_target(probs, target)
    n, c, h, w = probs.shape
    grad = np.zeros_like(probs)
    t = target[:, None].astype(np.intp)
    picked = np.take_along_axis(probs, t, axis=1)
    np.put_along_axis(grad, t, -1.0 / ((picked + EPS) * (n * h * w)), axis=1)
    return grad


def softmax_cross_entropy_backward(probs: Tensor, target: np.ndarray) -> Tensor:
    """Gradient of the mean cross-entropy w.r.t. the logits that produced ``probs``.

    The eps clamp enters as a per-pixel factor p_t / (p_t + eps), which is 1
    except where the target probability has underflowed.
    """
    target = np.asarray(target)
    _check_target(probs, target)
    n, c, h, w = probs.shape
    grad = probs.copy()
    t = target[:, None].astype(np.intp)
    picked = np.take_along_axis(probs, t, axis=1)
    np.put_along_axis(grad, t, picked - 1.0, axis=1)
    return grad * (picked / (picked + EPS)) / (n * h * w)


# --- dump format -----------------------------------------------------------

def _pair(path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    return path.parent / (path.name + ".json"), path.parent / (path.name + ".bin")


def dump_tensor(t: Tensor, path: str | Path) -> None:
    """Write ``<path>.json`` (header) and ``<path>.bin`` (little-endian f64 payload)."""
    head, body = _pair(path)
    t = np.asarray(t, dtype=np.float64)
    header = {"shape": list(t.shape), "dtype": "f64", "order": "row-major"}
    head.write_text(json.dumps(header) + "\n")
    body.write_bytes(t.astype("<f8").tobytes(order="C"))


def load_tensor(path: str | Path) -> Tensor:
    head, body = _pair(path)
    header = json.loads(head.read_text())
    if header.get("dtype") != "f64" or header.get("order") != "row-major":
        raise ValueError(f"unsupported tensor header {header}")
    data = np.frombuffer(body.read_bytes(), dtype="<f8")
    shape = tuple(header["shape"])
    if int(np.prod(shape)) != data.size:
        raise ShapeError(f"payload has {data.size} values, header shape {shape}")
    return data.reshape(shape).astype(np.float64)
