"""Random search over encoder x decoder x learning rate x batch size.

Encoder and decoder options are string labels over the toy network family:

    enc-d{depth}-c{base_channels}     e.g. "enc-d3-c8"
    dec-w{width_mult}-{skip|noskip}   e.g. "dec-w2-skip"

Each sampled candidate is trained from scratch for a fixed number of epochs
and scored by mean test IOU. Candidates whose training fails (say, an
encoder too deep for the image size) stay on the leaderboard with IOU 0 and
a failure flag.
"""

from __future__ import annotations

import bisect
import itertools
import math
import re
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

from . import toynet as tn
from .errors import AlsegError, ExhaustedError, ParameterError
from .parallel import pmap
from .rng import RngStream
from .synthdata import Example, stack

DEFAULT_LRS = (1e-4, 4e-4, 1e-5, 5e-5, 1e-6, 4e-6)
DEFAULT_BATCHES = (4, 8, 16)
DEFAULT_SEARCH_EPOCHS = 15
RANK_DECIMALS = 4

_ENC = re.compile(r"^enc-d(\d+)-c(\d+)$")
_DEC = re.compile(r"^dec-w(\d+)-(skip|noskip)$")


def default_encoders() -> list[str]:
    return [f"enc-d{d}-c{c}" for d in (3, 4, 5) for c in (4, 8, 16)]


def default_decoders() -> list[str]:
    return [f"dec-w{w}-{s}" for w in (1, 2) for s in ("skip", "noskip")]


@dataclass(frozen=True)
class SearchSpace:
    encoder_options: tuple = field(default_factory=lambda: tuple(default_encoders()))
    decoder_options: tuple = field(default_factory=lambda: tuple(default_decoders()))
    lr_options: tuple = DEFAULT_LRS
    batch_options: tuple = DEFAULT_BATCHES

    def __post_init__(self):
        for name in ("encoder_options", "decoder_options", "lr_options", "batch_options"):
            opts = tuple(getattr(self, name))
            object.__setattr__(self, name, opts)
            if not opts:
                raise ParameterError(f"{name} must not be empty")
            if len(set(opts)) != len(opts):
                raise ParameterError(f"{name} contains duplicates")

    def lists(self) -> tuple[tuple, ...]:
        return (self.encoder_options, self.decoder_options, self.lr_options, self.batch_options)


@dataclass(frozen=True)
class Candidate:
    encoder_label: str
    decoder_label: str
    lr: float
    batch_size: int

    def net_config(self, dropout_placement=tn.Placement.NONE) -> tn.NetConfig:
        m = _ENC.match(self.encoder_label)
        if not m:
            raise ParameterError(f"unknown encoder label {self.encoder_label!r}")
        d = _DEC.match(self.decoder_label)
        if not d:
            raise ParameterError(f"unknown decoder label {self.decoder_label!r}")
        return tn.NetConfig(encoder_depth=int(m[1]), base_channels=int(m[2]),
                            decoder_width_mult=int(d[1]), skip=d[2] == "skip",
                            dropout_placement=dropout_placement)


def space_size(space: SearchSpace) -> int:
    return math.prod(len(opts) for opts in space.lists())


def enumerate_space(space: SearchSpace) -> list[Candidate]:
    return [Candidate(*combo) for combo in itertools.product(*space.lists())]


def _decode(space: SearchSpace, index: int) -> Candidate:
    picks = []
    for opts in reversed(space.lists()):
        index, r = divmod(index, len(opts))
        picks.append(opts[r])
    return Candidate(*reversed(picks))


def sample_candidate(space: SearchSpace, stream: RngStream, without_replacement: bool = False,
                     history: Sequence[Candidate] = ()) -> Candidate:
    """Uniform draw from the space, or from what is left of it."""
    gen = stream.generator()
    n = space_size(space)
    if not without_replacement:
        return _decode(space, int(gen.integers(n)))
    seen = set(history)
    if len(seen) >= n:
        raise ExhaustedError(f"all {n} candidates have been drawn")
    remaining = [c for c in enumerate_space(space) if c not in seen]
    return remaining[int(gen.integers(len(remaining)))]


@dataclass(frozen=True)
class Evaluation:
    test_iou: float
    failed: bool = False
    message: str = ""

    def __float__(self) -> float:
        return self.test_iou


def evaluate_candidate(candidate: Candidate, train_set: list[Example], test_set: list[Example],
                       epochs: int = DEFAULT_SEARCH_EPOCHS, stream: RngStream | None = None) -> Evaluation:
    from .al_loop import evaluate

    if not train_set or not test_set:
        raise ParameterError("train and test sets must be non-empty")
    stream = stream or RngStream(0, "ednas")
    try:
        model = tn.build_model(candidate.net_config(), stream.child("init"))
        images, masks = stack(train_set)
        tn.train(model, images, masks, epochs, candidate.lr, candidate.batch_size, stream.child("train"))
        return Evaluation(evaluate(model, test_set))
    except (AlsegError, FloatingPointError) as exc:
        return Evaluation(0.0, True, f"{type(exc).__name__}: {exc}")


@dataclass
class Trial:
    trial: int
    candidate: Candidate
    test_iou: float
    failed: bool
    wallclock_s: float = 0.0


@dataclass(frozen=True)
class LeaderboardRow:
    rank: int
    test_iou: float
    batch_size: int
    lr: float
    encoder_label: str
    decoder_label: str
    failed: bool = False
    trial: int = 0


class Leaderboard:
    """Trials sorted by IOU (descending), earlier trials first on exact ties.

    Ranks use standard competition ranking on IOUs rounded to 4 decimals.
    """

    def __init__(self, trials: Sequence[Trial] = ()):
        self._keys: list[tuple[float, int]] = []
        self._trials: list[Trial] = []
        for t in trials:
            self.insert(t)

    def insert(self, trial: Trial) -> None:
        key = (-trial.test_iou, trial.trial)
        i = bisect.bisect(self._keys, key)
        self._keys.insert(i, key)
        self._trials.insert(i, trial)

    def __len__(self) -> int:
        return len(self._trials)

    def __iter__(self):
        return iter(self.rows)

    def __getitem__(self, i):
        return self.rows[i]

    @property
    def rows(self) -> list[LeaderboardRow]:
        out = []
        prev = None
        rank = 0
        for pos, t in enumerate(self._trials, start=1):
            r = round(t.test_iou, RANK_DECIMALS)
            if r != prev:
                rank, prev = pos, r
            c = t.candidate
            out.append(LeaderboardRow(rank, t.test_iou, c.batch_size, c.lr, c.encoder_label,
                                      c.decoder_label, t.failed, t.trial))
        return out

    def best(self) -> LeaderboardRow:
        return self.rows[0]


def _eval_job(job):
    trial, cand, train_set, test_set, epochs, stream, evaluator = job
    t0 = time.perf_counter()
    if evaluator is None:
        ev = evaluate_candidate(cand, train_set, test_set, epochs, stream)
    else:
        ev = evaluator(cand, stream)
        if not isinstance(ev, Evaluation):
            ev = Evaluation(float(ev))
    return Trial(trial, cand, ev.test_iou, ev.failed, time.perf_counter() - t0)


def random_search(space: SearchSpace, n_trials: int, budget_per_trial: int = DEFAULT_SEARCH_EPOCHS,
                  stream: RngStream | None = None, train_set: list[Example] = (),
                  test_set: list[Example] = (), *, without_replacement: bool = False,
                  evaluator: Callable[[Candidate, RngStream], float | Evaluation] | None = None,
                  workers: int = 1) -> tuple[Leaderboard, list[Trial]]:
    """Sample ``n_trials`` candidates, evaluate each, and rank them.

    ``budget_per_trial`` is the training epoch count per candidate. A custom
    ``evaluator(candidate, stream)`` replaces training, e.g. for tests.
    """
    if n_trials < 1:
        raise ParameterError("n_trials must be >= 1")
    stream = stream or RngStream(0, "ednas")
    history: list[Candidate] = []
    jobs = []
    for t in range(n_trials):
        cand = sample_candidate(space, stream.child("sample", item_id=t), without_replacement, history)
        history.append(cand)
        jobs.append((t, cand, list(train_set), list(test_set), budget_per_trial,
                     stream.child("trial", item_id=t), evaluator))
    trials = pmap(_eval_job, jobs, workers)
    return Leaderboard(trials), trials


# --- leaderboard table rendering ---------------------------------------------

def _ordinal(n: int) -> str:
    suffix = "th" if 10 <= n % 100 <= 20 else {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"


TABLE_HEADER = ("Rank", "IOU metric", "batch size", "learning rate", "Encoder", "Architecture")


def format_row(row: LeaderboardRow) -> tuple[str, ...]:
    iou = f"{100 * row.test_iou:.2f} %" + (" (failed)" if row.failed else "")
    return (_ordinal(row.rank), iou, str(row.batch_size), f"{row.lr:g}", row.encoder_label, row.decoder_label)


def format_table(board: Leaderboard, top: int = 5) -> str:
    cells = [TABLE_HEADER] + [format_row(r) for r in board.rows[:top]]
    widths = [max(len(c[i]) for c in cells) for i in range(len(TABLE_HEADER))]
    return "\n".join(" | ".join(c[i].ljust(widths[i]) for i in range(len(c))).rstrip() for c in cells)


def parse_row(line: str) -> LeaderboardRow:
    """Parse a leaderboard table row such as ``1st | 87.00 % | 4 | 4e-5 | timm-skresnet34 | Linknet``."""
    parts = [p.strip() for p in line.strip().strip("|").split("|")]
    if len(parts) != 6:
        raise ValueError(f"expected 6 columns, got {len(parts)}: {line!r}")
    rank = int(re.match(r"\d+", parts[0])[0])
    failed = "(failed)" in parts[1]
    iou = float(parts[1].replace("(failed)", "").replace("%", "").strip()) / 100.0
    return LeaderboardRow(rank, iou, int(parts[2]), float(parts[3]), parts[4], parts[5], failed)
