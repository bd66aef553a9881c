"""Uncertainty maps from Monte Carlo probability stacks, and top-K querying.

A stack has shape (T, C, H, W): T stochastic passes, C class probabilities
per pixel. Entropies use the natural log with probabilities clamped to
[1e-12, 1], so exact zeros contribute 0 * ln 0 = 0.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError
from .rng import RngStream

DEFAULT_K = 50
EPS = 1e-12
NORM_TOL = 1e-6


class Acquisition(str, enum.Enum):
    CFE = "CFE"
    MFE = "MFE"
    MI = "MI"
    STD = "STD"
    RANDOM = "Random"


@dataclass(frozen=True)
class UncertaintyScore:
    image_id: int
    acquisition: Acquisition
    value: float


def validate_stack(stack) -> np.ndarray:
    s = np.asarray(stack, dtype=np.float64)
    if s.ndim != 4:
        raise ShapeError(f"probability stack must be T x C x H x W, got shape {s.shape}")
    if s.shape[0] < 1 or s.shape[1] < 2:
        raise ShapeError(f"need T >= 1 and C >= 2, got shape {s.shape}")
    if not np.all(np.isfinite(s)) or s.min() < -NORM_TOL or s.max() > 1 + NORM_TOL:
        raise DataError("probabilities must be finite and lie in [0, 1]")
    if np.abs(s.sum(axis=1) - 1.0).max() > NORM_TOL:
        raise DataError("class probabilities do not sum to 1")
    return s


def _plogp(p: np.ndarray) -> np.ndarray:
    return p * np.log(np.clip(p, EPS, 1.0))


def category_first_entropy(stack) -> np.ndarray:
    """Per-pixel entropy of each pass, averaged over passes."""
    s = validate_stack(stack)
    return -_plogp(s).sum(axis=1).mean(axis=0)


def mean_first_entropy(stack) -> np.ndarray:
    """Entropy of the pass-averaged per-pixel distribution."""
    s = validate_stack(stack)
    return -_plogp(s.mean(axis=0)).sum(axis=0)


def mutual_information(stack) -> np.ndarray:
    s = validate_stack(stack)
    return np.abs(mean_first_entropy(s) - category_first_entropy(s))


def std_uncertainty(stack) -> np.ndarray:
    """Population std over passes of the foreground probability (C = 2),
    or the sum of per-class stds for C > 2."""
    s = validate_stack(stack)
    if s.shape[1] == 2:
        return s[:, 1].std(axis=0)
    return s.std(axis=0).sum(axis=0)


_MAPS = {
    Acquisition.CFE: category_first_entropy,
    Acquisition.MFE: mean_first_entropy,
    Acquisition.MI: mutual_information,
    Acquisition.STD: std_uncertainty,
}


def uncertainty_map(stack, acquisition: Acquisition | str) -> np.ndarray:
    acquisition = Acquisition(acquisition)
    if acquisition is Acquisition.RANDOM:
        raise ValueError("Random acquisition has no per-pixel map")
    return _MAPS[acquisition](stack)


def random_score(image_id: int, phase: int, stream: RngStream) -> float:
    """Uniform [0, 1) draw keyed by (seed, "acq-random", phase, image_id)."""
    key = RngStream(stream.global_seed, "acq-random", phase=phase, item_id=image_id)
    return float(key.generator().random())


def score_image(stack, acquisition: Acquisition | str, image_id: int = 0, *,
                phase: int = 0, stream: RngStream | None = None) -> UncertaintyScore:
    acquisition = Acquisition(acquisition)
    if acquisition is Acquisition.RANDOM:
        if stream is None:
            raise ValueError("Random acquisition needs an RngStream")
        return UncertaintyScore(image_id, acquisition, random_score(image_id, phase, stream))
    value = float(uncertainty_map(stack, acquisition).sum())
    return UncertaintyScore(image_id, acquisition, max(value, 0.0))


def select_top_k(scores: list[UncertaintyScore], k: int = DEFAULT_K) -> list[int]:
    """Ids of the k highest scores, descending; ties go to the lower id.

    k larger than the pool is clamped, so the result may be shorter than k.
    """
    kinds = {s.acquisition for s in scores}
    if len(kinds) > 1:
        raise ValueError(f"scores mix acquisition types: {sorted(k.value for k in kinds)}")
    ranked = sorted(scores, key=lambda s: (-s.value, s.image_id))
    return [s.image_id for s in ranked[:max(k, 0)]]


# --- interchange files ----------------------------------------------------------

def write_stack(stack, path: str | Path) -> None:
    """``<path>.json`` header {T, C, H, W} plus ``<path>.bin`` little-endian f64 payload."""
    s = validate_stack(stack)
    path = Path(path)
    t, c, h, w = s.shape
    (path.parent / (path.name + ".json")).write_text(json.dumps({"T": t, "C": c, "H": h, "W": w}) + "\n")
    (path.parent / (path.name + ".bin")).write_bytes(s.astype("<f8").tobytes())


def read_stack(path: str | Path) -> np.ndarray:
    path = Path(path)
    hdr = json.loads((path.parent / (path.name + ".json")).read_text())
    data = np.frombuffer((path.parent / (path.name + ".bin")).read_bytes(), dtype="<f8")
    shape = (hdr["T"], hdr["C"], hdr["H"], hdr["W"])
    if data.size != int(np.prod(shape)):
        raise ShapeError(f"payload has {data.size} values, header says {shape}")
    return validate_stack(data.reshape(shape))


def write_scores_csv(scores: list[UncertaintyScore], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "acquisition", "score"])
        for s in scores:
            w.writerow([s.image_id, s.acquisition.value, f"{s.value:.6f}"])


def read_scores_csv(path: str | Path) -> list[UncertaintyScore]:
    with open(path, newline="") as fh:
        return [UncertaintyScore(int(r["image_id"]), Acquisition(r["acquisition"]), float(r["score"]))
                for r in csv.DictReader(fh)]
