"""IOU, mask prediction, and the CSV/JSON files experiments leave behind.

Every writer is byte-deterministic: fixed column order, 6-decimal fixed-point
floats, LF line endings, no timestamps.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, ParameterError, ShapeError

PHASE_LOG_COLUMNS = ["phase", "labeled_count", "pct_of_pool", "acquisition", "seed",
                     "test_iou", "train_loss_final", "wallclock_s"]
CURVE_COLUMNS = ["phase", "acquisition", "seed", "test_iou"]
CURVE_SUMMARY_COLUMNS = ["phase", "acquisition", "labeled_count", "mean_iou", "std_iou", "n_runs"]
TRIAL_LOG_COLUMNS = ["trial", "encoder", "decoder", "lr", "batch", "test_iou", "failed", "wallclock_s"]
LEADERBOARD_COLUMNS = ["rank", "iou_metric", "batch_size", "learning_rate", "encoder", "architecture", "failed"]


@dataclass(frozen=True)
class IouScore:
    value: float
    intersection: int
    union: int


def _binary(m, name: str) -> np.ndarray:
    a = np.asarray(m)
    if a.size and not np.isin(a, (0, 1)).all():
        raise DataError(f"{name} must be a binary mask")
    return a.astype(bool)


def iou(pred, truth) -> IouScore:
    """Foreground intersection over union; two empty masks score 1.0."""
    p = _binary(pred, "pred")
    t = _binary(truth, "truth")
    if p.shape != t.shape:
        raise ShapeError(f"mask shapes differ: {p.shape} vs {t.shape}")
    inter = int(np.count_nonzero(p & t))
    union = int(np.count_nonzero(p | t))
    return IouScore(inter / union if union else 1.0, inter, union)


def mean_iou(preds, truths) -> float:
    """Average of per-image IOU scores."""
    scores = [iou(p, t).value for p, t in zip(preds, truths)]
    if not scores:
        raise DataError("mean_iou of an empty set")
    return float(np.mean(scores))


def predict_mask(logits) -> np.ndarray:
    """Channel argmax of 2-class logits; ties go to class 0.

    A 1 x C x H x W (or C x H x W) input yields H x W; N x C x H x W yields N x H x W.
    """
    z = np.asarray(logits)
    if z.ndim == 3:
        z = z[None]
    if z.ndim != 4:
        raise ShapeError(f"logits must be (N,) C x H x W, got {z.shape}")
    if z.shape[1] != 2:
        raise ParameterError(f"predict_mask supports C == 2 only, got C = {z.shape[1]}")
    m = (z[:, 1] > z[:, 0]).astype(np.uint8)
    return m[0] if m.shape[0] == 1 else m


# --- writers ---------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: str | Path, columns: Sequence[str] | None = None) -> list[dict]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if columns is not None and reader.fieldnames != list(columns):
            raise DataError(f"{path}: expected columns {list(columns)}, found {reader.fieldnames}")
        return list(reader)


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def phase_rows(reports, acquisition: str, seed: int, pool_size: int, timing: bool = False):
    for r in reports:
        yield [r.phase, r.labeled_count, 100.0 * r.labeled_count / pool_size, acquisition, seed,
               float(r.test_iou), float(r.train_loss_final), float(r.wallclock_s) if timing else 0.0]


def emit_reports(runs, out_dir: str | Path, pool_size: int, timing: bool = False) -> list[Path]:
    """Write the phase log, curves and queried-id ledger for a set of AL runs.

    ``runs`` is a list of ``(acquisition, seed, [PhaseReport, ...])``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log, curves, ledger = [], [], []
    for acq, seed, reports in runs:
        log.extend(phase_rows(reports, acq, seed, pool_size, timing))
        curves.extend([r.phase, acq, seed, float(r.test_iou)] for r in reports)
        ledger.append({"acquisition": acq, "seed": seed,
                       "phases": [{"phase": r.phase, "labeled_count": r.labeled_count,
                                   "queried_ids": [int(i) for i in r.queried_ids]} for r in reports]})
    paths = [
        write_csv(out_dir / "phase_log.csv", PHASE_LOG_COLUMNS, log),
        write_csv(out_dir / "curves.csv", CURVE_COLUMNS, curves),
        write_json(out_dir / "queried_ids.json", ledger),
    ]
    return paths


def emit_curve_summary(table, out_dir: str | Path) -> Path:
    rows = [[r["phase"], r["acquisition"], r["labeled_count"], r["mean_iou"], r["std_iou"], r["n_runs"]]
            for r in table]
    return write_csv(Path(out_dir) / "curve_summary.csv", CURVE_SUMMARY_COLUMNS, rows)


def emit_search(trials, leaderboard, out_dir: str | Path, timing: bool = False) -> list[Path]:
    out_dir = Path(out_dir)
    trial_rows = [[t.trial, t.candidate.encoder_label, t.candidate.decoder_label, float(t.candidate.lr),
                   t.candidate.batch_size, float(t.test_iou), bool(t.failed),
                   float(t.wallclock_s) if timing else 0.0] for t in trials]
    board_rows = [[r.rank, float(r.test_iou), r.batch_size, float(r.lr), r.encoder_label, r.decoder_label,
                   bool(r.failed)] for r in leaderboard]
    return [write_csv(out_dir / "trial_log.csv", TRIAL_LOG_COLUMNS, trial_rows),
            write_csv(out_dir / "leaderboard.csv", LEADERBOARD_COLUMNS, board_rows)]
