"""Command-line entry point: ``alseg {gen-data,al-run,nas-search,report}``.

Exit codes: 0 success (or IOU threshold reached), 2 usage/config/data
error, 3 label budget exhausted before the threshold was reached.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import acquisition as acq
from . import al_loop as al
from . import ednas
from . import metrics_io as mio
from . import synthdata as sd
from . import toynet as tn
from .errors import AlsegError
from .rng import RngStream

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BUDGET = 3


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    # dataset
    dataset: str = ""
    n: int = 750
    size: int = 32
    n_test: int = 150
    out: str = "run"
    seed: int = 0
    # active learning
    n_init: int = al.DEFAULT_N_INIT
    k_per_phase: int = acq.DEFAULT_K
    epochs_per_phase: int = tn.DEFAULT_EPOCHS
    T: int = tn.DEFAULT_MC_SAMPLES
    acquisitions: list = field(default_factory=lambda: ["MFE"])
    compare: bool = False
    n_seeds: int = 1
    iou_threshold: float = al.DEFAULT_IOU_THRESHOLD
    label_budget: int = al.DEFAULT_LABEL_BUDGET
    lr: float = 4e-4
    batch_size: int = 4
    # network
    encoder_depth: int = 3
    base_channels: int = 8
    decoder_width_mult: int = 1
    skip: bool = True
    dropout_placement: str = "HeadOnly"
    dropout_rate: float = 0.5
    # search
    encoder_options: list = field(default_factory=ednas.default_encoders)
    decoder_options: list = field(default_factory=ednas.default_decoders)
    lr_options: list = field(default_factory=lambda: list(ednas.DEFAULT_LRS))
    batch_options: list = field(default_factory=lambda: list(ednas.DEFAULT_BATCHES))
    n_trials: int = 10
    search_epochs: int = ednas.DEFAULT_SEARCH_EPOCHS
    without_replacement: bool = False
    # execution
    workers: int = 1
    record_timing: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        defaults = cls()
        for k, v in d.items():
            want = type(getattr(defaults, k))
            ok = (isinstance(v, bool) if want is bool else
                  isinstance(v, (int, float)) and not isinstance(v, bool) if want is float else
                  isinstance(v, int) and not isinstance(v, bool) if want is int else
                  isinstance(v, want))
            if not ok:
                raise ConfigError(f"config key {k!r} must be {want.__name__}, got {type(v).__name__}")
        cfg = cls(**d)
        cfg.lr = float(cfg.lr)
        cfg.iou_threshold = float(cfg.iou_threshold)
        cfg.dropout_rate = float(cfg.dropout_rate)
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def net_config(self) -> tn.NetConfig:
        return tn.NetConfig(self.encoder_depth, self.base_channels, self.decoder_width_mult,
                            self.dropout_placement, self.dropout_rate, 2, self.skip)

    def al_config(self, acquisition: str | None = None) -> al.ALConfig:
        return al.ALConfig(n_init=self.n_init, k_per_phase=self.k_per_phase,
                           epochs_per_phase=self.epochs_per_phase, T=self.T,
                           acquisition=acquisition or self.acquisitions[0],
                           iou_threshold=self.iou_threshold, label_budget=self.label_budget,
                           net_config=self.net_config(), lr=self.lr, batch_size=self.batch_size,
                           seed=self.seed)

    def search_space(self) -> ednas.SearchSpace:
        return ednas.SearchSpace(tuple(self.encoder_options), tuple(self.decoder_options),
                                 tuple(float(x) for x in self.lr_options), tuple(self.batch_options))


DEFAULTS_TABLE = """\
defaults (config key: value):
  T (MC dropout passes)            30
  k_per_phase (K, queried/phase)   50
  n_init (initial labeled pool)    40
  epochs_per_phase                 30
  iou_threshold                    0.87
  label_budget                     1540
  lr / batch_size                  4e-4 / 4
  lr_options                       1e-4 4e-4 1e-5 5e-5 1e-6 4e-6
  batch_options                    4 8 16
  n_trials / search_epochs         10 / 15
  dropout_placement / rate         HeadOnly / 0.5
  workers                          1
exit codes: 0 ok or threshold reached, 2 usage/config error, 3 budget exhausted
"""


def _split(cfg: RunConfig):
    manifest, examples = sd.load_dataset(cfg.dataset)
    if cfg.n_test < 1 or cfg.n_test >= len(examples):
        raise ConfigError(f"n_test must lie in [1, {len(examples) - 1}]")
    return examples[:-cfg.n_test], examples[-cfg.n_test:]


def cmd_gen_data(args) -> int:
    cfg = RunConfig.load(args.config)
    n = args.n if args.n is not None else cfg.n
    size = args.size if args.size is not None else cfg.size
    seed = args.seed if args.seed is not None else cfg.seed
    out = args.out or cfg.out
    examples = sd.generate_dataset(n, size, seed)
    sd.save_dataset(examples, out, n=n, size=size, seed=seed)
    print(f"wrote {n} examples ({size}x{size}) to {out}")
    return EXIT_OK


def cmd_al_run(args) -> int:
    cfg = RunConfig.load(args.config)
    workers = args.workers if args.workers is not None else cfg.workers
    out = Path(args.out or cfg.out)
    pool, test = _split(cfg)
    if cfg.compare or len(cfg.acquisitions) > 1 or cfg.n_seeds > 1:
        table, runs = al.compare_acquisitions(cfg.al_config(), pool, test, cfg.acquisitions,
                                              cfg.n_seeds, workers=workers)
        mio.emit_reports(runs, out, len(pool), cfg.record_timing)
        mio.emit_curve_summary(table, out)
        status = EXIT_OK
    else:
        ac = cfg.al_config()
        reports = al.run_until_stop(ac, pool, test, workers=workers)
        runs = [(ac.acquisition.value, ac.seed, reports)]
        mio.emit_reports(runs, out, len(pool), cfg.record_timing)
        mio.emit_curve_summary(al.curve_table(runs), out)
        status = EXIT_OK if al.threshold_reached(reports, ac) else EXIT_BUDGET
    mio.write_json(out / "run_config.json", cfg.to_dict())
    print(_summary(out))
    return status


def cmd_nas_search(args) -> int:
    cfg = RunConfig.load(args.config)
    workers = args.workers if args.workers is not None else cfg.workers
    out = Path(args.out or cfg.out)
    space = cfg.search_space()
    train, test = _split(cfg)
    size = ednas.space_size(space)
    board, trials = ednas.random_search(space, cfg.n_trials, cfg.search_epochs, RngStream(cfg.seed, "ednas"),
                                        train, test, without_replacement=cfg.without_replacement,
                                        workers=workers)
    mio.emit_search(trials, board.rows, out, cfg.record_timing)
    mio.write_json(out / "search.json", {"space_size": size, "n_trials": cfg.n_trials,
                                         "search_epochs": cfg.search_epochs, "seed": cfg.seed,
                                         "option_counts": [len(o) for o in space.lists()]})
    mio.write_json(out / "run_config.json", cfg.to_dict())
    print(f"space_size: {size}")
    print(ednas.format_table(board, top=5))
    return EXIT_OK


def summarize(run_dir: str | Path) -> list[dict]:
    """Per-acquisition summary of a run directory's curves and phase log."""
    run_dir = Path(run_dir)
    curves = mio.read_csv(run_dir / "curves.csv", mio.CURVE_COLUMNS)
    log = mio.read_csv(run_dir / "phase_log.csv", mio.PHASE_LOG_COLUMNS)
    labeled = {(r["acquisition"], int(r["seed"]), int(r["phase"])): int(r["labeled_count"]) for r in log}
    out = []
    for name in dict.fromkeys(r["acquisition"] for r in curves):
        rows = [r for r in curves if r["acquisition"] == name]
        seeds = sorted({int(r["seed"]) for r in rows})
        by_phase: dict[int, list[float]] = {}
        counts: dict[int, int] = {}
        for r in rows:
            p = int(r["phase"])
            by_phase.setdefault(p, []).append(float(r["test_iou"]))
            counts[p] = labeled[(name, int(r["seed"]), p)]
        phases = sorted(p for p, v in by_phase.items() if len(v) == len(seeds))
        means = [float(np.mean(by_phase[p])) for p in phases]
        best = max(means)
        at98 = al.labels_to_reach([counts[p] for p in phases], means, 0.98 * best)
        out.append({"acquisition": name, "seeds": len(seeds), "phases": len(phases), "best_iou": best,
                    "labels_used": max(counts[p] for p in phases), "labels_at_98pct_of_best": at98})
    return out


def _summary(run_dir) -> str:
    lines = [f"{'acquisition':<12}{'seeds':>6}{'phases':>8}{'best_iou':>10}{'labels':>8}{'labels@98%':>12}"]
    for s in summarize(run_dir):
        lines.append(f"{s['acquisition']:<12}{s['seeds']:>6}{s['phases']:>8}{s['best_iou']:>10.4f}"
                     f"{s['labels_used']:>8}{s['labels_at_98pct_of_best']:>12}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"no run directory at {run_dir}")
    try:
        print(_summary(run_dir))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"malformed run CSVs in {run_dir}: {exc}") from exc
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="alseg", description=__doc__, epilog=DEFAULTS_TABLE, formatter_class=fmt)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic ellipse dataset", epilog=DEFAULTS_TABLE,
                       formatter_class=fmt)
    g.add_argument("--config", help="JSON run config (n, size, seed, out)")
    g.add_argument("--n", type=int, help="number of examples (default 750)")
    g.add_argument("--size", type=int, help="image side, one of 16/32/64/128/256 (default 32)")
    g.add_argument("--seed", type=int, help="generation seed (default 0)")
    g.add_argument("--out", help="output directory (default run)")
    g.set_defaults(func=cmd_gen_data)

    a = sub.add_parser("al-run", help="run active learning (single run or acquisition comparison)",
                       epilog=DEFAULTS_TABLE, formatter_class=fmt)
    a.add_argument("--config", required=True, help="JSON run config")
    a.add_argument("--workers", type=int, help="worker processes (default 1)")
    a.add_argument("--out", help="override output directory")
    a.set_defaults(func=cmd_al_run)

    s = sub.add_parser("nas-search", help="random search over the encoder/decoder/lr/batch space",
                       epilog=DEFAULTS_TABLE, formatter_class=fmt)
    s.add_argument("--config", required=True, help="JSON run config")
    s.add_argument("--workers", type=int, help="worker processes (default 1)")
    s.add_argument("--out", help="override output directory")
    s.set_defaults(func=cmd_nas_search)

    r = sub.add_parser("report", help="summarise an al-run output directory", epilog=DEFAULTS_TABLE,
                       formatter_class=fmt)
    r.add_argument("--run-dir", required=True, help="directory written by al-run")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, AlsegError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
