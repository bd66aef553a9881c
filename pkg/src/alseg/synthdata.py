"""Synthetic ellipse segmentation data, preprocessing and augmentation.

Each image is a filled, rotated ellipse with a brighter rim on a dark noisy
background, rendered at twice the target resolution and then resized down,
so the resize path is always exercised. Masks are evaluated analytically on
the target grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParameterError
from .rng import RngStream

VALID_SIZES = (16, 32, 64, 128, 256)
FG_RANGE = (0.05, 0.45)

BACKGROUND = 0.15
INTERIOR = 0.55
RIM = 0.9
RIM_WIDTH = 0.12  # in normalised ellipse radius units
NOISE_SIGMA = 0.1

AUG_NOISE_SIGMA = 0.05
AUG_NOISE_P = 0.2
AUG_JITTER_P = 0.2


@dataclass
class Example:
    id: int
    image: np.ndarray  # 1 x 1 x H x W, values in [0, 1]
    mask: np.ndarray   # H x W, values in {0, 1}


def _ellipse_radius(n: int, cx, cy, a, b, theta) -> np.ndarray:
    """Normalised radius (<1 inside) of every pixel centre on an n x n grid in [0, 1]^2."""
    u = np.linspace(0.0, 1.0, n)
    yy, xx = np.meshgrid(u, u, indexing="ij")
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(theta), np.sin(theta)
    xr = c * dx + s * dy
    yr = -s * dx + c * dy
    return np.sqrt((xr / a) ** 2 + (yr / b) ** 2)


def _render(size: int, gen: np.random.Generator):
    while True:
        cx, cy = gen.uniform(0.3, 0.7, size=2)
        a, b = gen.uniform(0.12, 0.4, size=2)
        theta = gen.uniform(0.0, np.pi)
        mask = (_ellipse_radius(size, cx, cy, a, b, theta) < 1.0).astype(np.uint8)
        if FG_RANGE[0] <= mask.mean() <= FG_RANGE[1]:
            break
    r = _ellipse_radius(2 * size, cx, cy, a, b, theta)
    raw = np.full(r.shape, BACKGROUND)
    raw[r < 1.0] = INTERIOR
    raw[(r >= 1.0) & (r < 1.0 + RIM_WIDTH)] = RIM
    raw = np.clip(raw + gen.normal(0.0, NOISE_SIGMA, size=raw.shape), 0.0, 1.0)
    return raw, mask


def generate_dataset(n: int, size: int = 32, seed: int = 0) -> list[Example]:
    if size not in VALID_SIZES:
        raise ParameterError(f"size must be one of {VALID_SIZES}, got {size}")
    if n < 1:
        raise ParameterError("n must be >= 1")
    out = []
    for i in range(n):
        gen = RngStream(seed, "synthdata", item_id=i).generator()
        raw, mask = _render(size, gen)
        out.append(Example(i, preprocess(raw, size), mask))
    return out


def bilinear_resize(img: np.ndarray, size: int) -> np.ndarray:
    """Align-corners bilinear resize of a 2-D array to size x size."""
    h, w = img.shape

    def axis(n_in):
        if n_in == 1:
            pos = np.zeros(size)
        else:
            pos = np.linspace(0.0, n_in - 1, size)
        lo = np.clip(np.floor(pos).astype(int), 0, max(n_in - 2, 0))
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, fy = axis(h)
    x0, x1, fx = axis(w)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy[:, None]) + bot * fy[:, None]


def preprocess(image, target_size: int) -> np.ndarray:
    """Resize to target_size x target_size and min-max scale into [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise DataError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if img.shape != (target_size, target_size):
        img = bilinear_resize(img, target_size)
    lo, hi = img.min(), img.max()
    if hi - lo <= 0:
        img = np.zeros_like(img)
    else:
        img = (img - lo) / (hi - lo)
    return img[None, None]


def stack(examples: list[Example]) -> tuple[np.ndarray, np.ndarray]:
    """Images (N x 1 x H x W) and masks (N x H x W) for a list of examples."""
    if not examples:
        return np.zeros((0, 1, 0, 0)), np.zeros((0, 0, 0), dtype=np.uint8)
    return (np.concatenate([e.image for e in examples], axis=0),
            np.stack([e.mask for e in examples]))


# --- augmentation --------------------------------------------------------------

def _geom(a: np.ndarray, k: int, flip: bool, transpose: bool) -> np.ndarray:
    a = np.rot90(a, k, axes=(-2, -1))
    if flip:
        a = a[..., ::-1]
    if transpose:
        a = np.swapaxes(a, -1, -2)
    return np.ascontiguousarray(a)


def augment(example: Example, stream: RngStream) -> Example:
    """Random 90-degree rotation, flip, transpose, noise and brightness/contrast.

    Geometric transforms are applied to image and mask alike; intensity
    transforms touch only the image, which is clipped back to [0, 1].
    """
    gen = stream.generator()
    k = int(gen.integers(0, 4))
    flip = gen.random() < 0.5
    transpose = gen.random() < 0.5
    noise = gen.random() < AUG_NOISE_P
    jitter = gen.random() < AUG_JITTER_P
    # draw every parameter up front so the stream consumption is fixed
    noise_field = gen.normal(0.0, AUG_NOISE_SIGMA, size=example.image.shape)
    gain = gen.uniform(0.9, 1.1)
    offset = gen.uniform(-0.05, 0.05)

    img = example.image
    if noise:
        img = img + noise_field
    if jitter:
        img = img * gain + offset
    img = _geom(np.clip(img, 0.0, 1.0), k, flip, transpose)
    mask = _geom(example.mask, k, flip, transpose)
    return Example(example.id, img, mask)


def augment_arrays(images: np.ndarray, masks: np.ndarray, stream: RngStream):
    out = [augment(Example(i, images[i:i + 1], masks[i]), stream.draw(i)) for i in range(len(images))]
    return stack(out)


# --- dataset directory format ------------------------------------------------

def write_pgm(path: Path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.uint8)
    h, w = arr.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PGM is supported")
    pos += 1
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def save_dataset(examples: list[Example], out_dir: str | Path, *, n: int, size: int, seed: int) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for e in examples:
        write_pgm(out_dir / f"image_{e.id:05d}.pgm", np.round(255.0 * e.image[0, 0]))
        write_pgm(out_dir / f"mask_{e.id:05d}.pgm", 255 * e.mask)
    manifest = {"n": n, "size": size, "seed": seed, "ids": [e.id for e in examples]}
    (out_dir / "manifest.json").write_text(json.dumps(manifest) + "\n")


def load_dataset(in_dir: str | Path) -> tuple[dict, list[Example]]:
    in_dir = Path(in_dir)
    manifest_path = in_dir / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    examples = []
    for i in manifest["ids"]:
        img = read_pgm(in_dir / f"image_{i:05d}.pgm").astype(np.float64) / 255.0
        mask = (read_pgm(in_dir / f"mask_{i:05d}.pgm") > 127).astype(np.uint8)
        examples.append(Example(i, img[None, None], mask))
    return manifest, examples
