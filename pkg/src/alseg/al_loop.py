"""Pool-based active learning.

Each phase trains two models of the same architecture on the labeled set:
one with dropout (to rank the unlabeled pool by MC-dropout uncertainty) and
one without (whose test IOU is what gets reported). The top-K most uncertain
images are then labeled by the oracle, which here is a ground-truth lookup.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from . import acquisition as acq
from . import toynet as tn
from .errors import ParameterError, StateError
from .metrics_io import mean_iou, predict_mask
from .parallel import pmap
from .rng import RngStream
from .synthdata import Example, stack

DEFAULT_N_INIT = 40
DEFAULT_IOU_THRESHOLD = 0.87
DEFAULT_LABEL_BUDGET = 1540
DEFAULT_N_SEEDS = 3

# desk-scale preset
DESK_POOL = 600
DESK_TEST = 150
DESK_SIZE = 32


@dataclass(frozen=True)
class ALConfig:
    n_init: int = DEFAULT_N_INIT
    k_per_phase: int = acq.DEFAULT_K
    epochs_per_phase: int = tn.DEFAULT_EPOCHS
    T: int = tn.DEFAULT_MC_SAMPLES
    acquisition: acq.Acquisition = acq.Acquisition.MFE
    iou_threshold: float = DEFAULT_IOU_THRESHOLD
    label_budget: int = DEFAULT_LABEL_BUDGET
    net_config: tn.NetConfig = field(default_factory=tn.NetConfig)
    lr: float = 4e-4
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "acquisition", acq.Acquisition(self.acquisition))
        if self.n_init < 1:
            raise ParameterError("n_init must be >= 1")
        if self.k_per_phase < 1:
            raise ParameterError("k_per_phase must be >= 1")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ParameterError("iou_threshold must lie in [0, 1]")
        if self.label_budget < self.n_init:
            raise ParameterError("label_budget must be >= n_init")
        if self.T < 1 or self.epochs_per_phase < 0 or self.batch_size < 1:
            raise ParameterError("T >= 1, epochs_per_phase >= 0 and batch_size >= 1 required")


def desk_preset(**overrides) -> ALConfig:
    base = dict(n_init=20, k_per_phase=10, epochs_per_phase=15, T=10, label_budget=150,
                net_config=tn.NetConfig(dropout_placement=tn.Placement.FULL_DECODER))
    base.update(overrides)
    return ALConfig(**base)


@dataclass
class Pool:
    labeled: list[int]
    unlabeled: list[int]
    full_dataset: dict[int, Example]

    def check(self) -> None:
        lab, unl = set(self.labeled), set(self.unlabeled)
        if lab & unl or lab | unl != set(self.full_dataset) or len(lab) != len(self.labeled):
            raise StateError("pool partition invariant violated")

    def arrays(self, ids) -> tuple[np.ndarray, np.ndarray]:
        return stack([self.full_dataset[i] for i in ids])


@dataclass
class PhaseReport:
    phase: int
    labeled_count: int
    test_iou: float
    train_loss_final: float
    queried_ids: list[int]
    wallclock_s: float


def labeled_count_at(phase: int, n_init: int = DEFAULT_N_INIT, k: int = acq.DEFAULT_K) -> int:
    """Labeled-pool size at the start of ``phase`` (1-based) when every query is full."""
    return n_init + k * (phase - 1)


def init_pools(dataset: list[Example], n_init: int = DEFAULT_N_INIT, seed: int = 0) -> Pool:
    if len(dataset) < n_init:
        raise ParameterError(f"dataset has {len(dataset)} examples, n_init is {n_init}")
    ids = np.array(sorted(e.id for e in dataset))
    chosen = RngStream(seed, "init-pool").generator().choice(ids, size=n_init, replace=False)
    labeled = sorted(int(i) for i in chosen)
    taken = set(labeled)
    pool = Pool(labeled, [int(i) for i in ids if i not in taken], {e.id: e for e in dataset})
    pool.check()
    return pool


def _train_one(job):
    cfg, tag, images, masks, ac, phase = job
    model = tn.build_model(cfg, RngStream(ac.seed, f"init-{tag}", phase=phase))
    trace = tn.train(model, images, masks, ac.epochs_per_phase, ac.lr, ac.batch_size,
                     RngStream(ac.seed, f"train-{tag}", phase=phase))
    return model, trace


def _score_one(item, model: tn.Model, ac: ALConfig, phase: int) -> acq.UncertaintyScore:
    image_id, image = item
    stack_ = tn.mc_inference(model, image, ac.T, RngStream(ac.seed, "mc", phase=phase, item_id=image_id))
    return acq.score_image(stack_, ac.acquisition, image_id)


def evaluate(model: tn.Model, test_set: list[Example]) -> float:
    images, masks = stack(test_set)
    preds = predict_mask(tn.predict_logits(model, images))
    if preds.ndim == 2:
        preds = preds[None]
    return mean_iou(preds, masks)


def run_phase(pool: Pool, config: ALConfig, phase_index: int, test_set: list[Example], *,
              k: int | None = None, stop_at_threshold: bool = False,
              workers: int = 1) -> tuple[PhaseReport, Pool]:
    """One round: train both models, evaluate, score the pool, query top-k.

    ``k`` defaults to ``min(k_per_phase, |unlabeled|)``; ``k=0`` trains and
    evaluates only. With ``stop_at_threshold`` no labels are requested once
    the test IOU reaches the threshold.
    """
    t0 = time.perf_counter()
    if k is None:
        if not pool.unlabeled:
            raise StateError("unlabeled pool is empty")
        k = config.k_per_phase
    k = min(k, len(pool.unlabeled))
    labeled_count = len(pool.labeled)
    images, masks = pool.arrays(pool.labeled)

    seg_cfg = config.net_config.with_placement(tn.Placement.NONE)
    jobs = [(seg_cfg, "seg", images, masks, config, phase_index)]
    # Random ranks without a model, so the dropout model is only needed otherwise
    need_unc = k > 0 and config.acquisition is not acq.Acquisition.RANDOM
    if need_unc:
        jobs.append((config.net_config, "unc", images, masks, config, phase_index))
    trained = pmap(_train_one, jobs, workers)
    seg_model, seg_trace = trained[0]
    test_iou = evaluate(seg_model, test_set)

    if stop_at_threshold and test_iou >= config.iou_threshold:
        k = 0
    queried: list[int] = []
    if k > 0:
        if need_unc:
            unc_model = trained[1][0]
            items = [(i, pool.full_dataset[i].image) for i in pool.unlabeled]
            scores = pmap(partial(_score_one, model=unc_model, ac=config, phase=phase_index), items, workers)
        else:
            s = RngStream(config.seed)
            scores = [acq.score_image(None, acq.Acquisition.RANDOM, i, phase=phase_index, stream=s)
                      for i in pool.unlabeled]
        queried = acq.select_top_k(scores, k)

    # the oracle: ground truth is already stored with every example
    chosen = set(queried)
    new_pool = Pool(pool.labeled + queried, [i for i in pool.unlabeled if i not in chosen], pool.full_dataset)
    new_pool.check()
    report = PhaseReport(phase_index, labeled_count, test_iou,
                         seg_trace[-1] if seg_trace else float("nan"), queried,
                         time.perf_counter() - t0)
    return report, new_pool


def run_until_stop(config: ALConfig, dataset: list[Example], test_set: list[Example], *,
                   stop_on_threshold: bool = True, workers: int = 1) -> list[PhaseReport]:
    """Loop phases until the test IOU reaches the threshold, the label budget
    is spent, or the pool is exhausted. The stopping phase is reported."""
    pool = init_pools(dataset, config.n_init, config.seed)
    reports = []
    phase = 1
    while True:
        k = min(config.k_per_phase, config.label_budget - len(pool.labeled), len(pool.unlabeled))
        report, pool = run_phase(pool, config, phase, test_set, k=max(k, 0),
                                 stop_at_threshold=stop_on_threshold, workers=workers)
        reports.append(report)
        if stop_on_threshold and report.test_iou >= config.iou_threshold:
            break
        if not report.queried_ids:
            break
        phase += 1
    return reports


def threshold_reached(reports: list[PhaseReport], config: ALConfig) -> bool:
    return bool(reports) and reports[-1].test_iou >= config.iou_threshold


def _run_job(job):
    config, dataset, test_set = job
    return run_until_stop(config, dataset, test_set, stop_on_threshold=False)


def compare_acquisitions(config_base: ALConfig, dataset: list[Example], test_set: list[Example],
                         acquisitions=(acq.Acquisition.MFE, acq.Acquisition.RANDOM),
                         n_seeds: int = DEFAULT_N_SEEDS, *, seeds: list[int] | None = None,
                         workers: int = 1):
    """Budget-only runs for every (acquisition, seed).

    Returns ``(table, runs)``: ``table`` rows carry the per-phase mean and
    population std of test IOU per acquisition, ``runs`` is a list of
    ``(acquisition, seed, reports)``.
    """
    if n_seeds < 1:
        raise ParameterError("n_seeds must be >= 1")
    seeds = list(seeds) if seeds is not None else [config_base.seed + i for i in range(n_seeds)]
    keys = [(acq.Acquisition(a), s) for a in acquisitions for s in seeds]
    jobs = [(replace(config_base, acquisition=a, seed=s), dataset, test_set) for a, s in keys]
    results = pmap(_run_job, jobs, workers)
    runs = [(a.value, s, r) for (a, s), r in zip(keys, results)]
    return curve_table(runs), runs


def curve_table(runs) -> list[dict]:
    table = []
    for name in dict.fromkeys(a for a, _, _ in runs):
        group = [r for a, _, r in runs if a == name]
        n_phases = min(len(r) for r in group)
        for p in range(n_phases):
            ious = np.array([r[p].test_iou for r in group])
            table.append({"phase": group[0][p].phase, "acquisition": name,
                          "labeled_count": group[0][p].labeled_count,
                          "mean_iou": float(ious.mean()), "std_iou": float(ious.std()),
                          "n_runs": len(group)})
    return table


def full_data_iou(config: ALConfig, dataset: list[Example], test_set: list[Example]) -> float:
    """Test IOU of the segmentation model trained on the whole pool."""
    images, masks = stack(dataset)
    cfg = config.net_config.with_placement(tn.Placement.NONE)
    model, _ = _train_one((cfg, "seg-full", images, masks, config, 0))
    return evaluate(model, test_set)


def labels_to_reach(labeled_counts, ious, target: float) -> float:
    """First labeled count whose IOU reaches ``target``; inf if never."""
    for n, v in zip(labeled_counts, ious):
        if v >= target:
            return n
    return float("inf")


def compare_curves(table: list[dict], full_iou: float, challenger: str = "MFE",
                   baseline: str = "Random", after_phase: int = 3, slack: float = 0.005,
                   fraction: float = 0.98) -> dict:
    """Seed-averaged efficiency comparison of two acquisitions.

    ``curve_ok``: the challenger's mean curve stays within ``slack`` of the
    baseline at every phase after ``after_phase`` and is strictly above it on
    at least half of those phases. ``labels_ok``: the challenger needs no more
    labels than the baseline to reach ``fraction * full_iou``.
    """
    rows = {(r["acquisition"], r["phase"]): r for r in table}
    phases = sorted(p for a, p in rows if a == challenger and (baseline, p) in rows)
    late = [p for p in phases if p > after_phase]
    diffs = [rows[(challenger, p)]["mean_iou"] - rows[(baseline, p)]["mean_iou"] for p in late]
    curve_ok = bool(late) and all(d >= -slack for d in diffs) and sum(d > 0 for d in diffs) >= len(diffs) / 2

    def need(name):
        curve = [rows[(name, p)] for p in phases]
        return labels_to_reach([r["labeled_count"] for r in curve], [r["mean_iou"] for r in curve],
                               fraction * full_iou)

    n_challenger, n_baseline = need(challenger), need(baseline)
    return {"phases": late, "diffs": diffs, "curve_ok": curve_ok, "target": fraction * full_iou,
            "labels": {challenger: n_challenger, baseline: n_baseline},
            "labels_ok": n_challenger <= n_baseline, "passed": curve_ok and n_challenger <= n_baseline}
