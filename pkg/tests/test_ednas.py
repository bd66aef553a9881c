import hashlib
import itertools

import pytest
from hypothesis import given, settings, strategies as st

from alseg import ednas
from alseg.ednas import Candidate, Evaluation, Leaderboard, SearchSpace, Trial
from alseg.errors import ExhaustedError, ParameterError
from alseg.rng import RngStream
from alseg.synthdata import generate_dataset


def labels(prefix, n):
    return [f"{prefix}{i}" for i in range(n)]


def space_of(a, b, c, d):
    return SearchSpace(labels("e", a), labels("d", b), [10.0 ** -i for i in range(1, c + 1)], list(range(1, d + 1)))


SMALL = SearchSpace(["enc-d3-c4", "enc-d3-c8"], ["dec-w1-skip", "dec-w1-noskip"], [1e-4, 4e-4], [4])


def test_reference_space_size():
    assert ednas.space_size(space_of(46, 9, 6, 3)) == 7452
    assert ednas.space_size(space_of(2, 2, 2, 1)) == 8
    assert ednas.space_size(space_of(1, 1, 1, 1)) == 1


def test_default_space():
    s = SearchSpace()
    assert s.lr_options == (1e-4, 4e-4, 1e-5, 5e-5, 1e-6, 4e-6) and s.batch_options == (4, 8, 16)
    assert ednas.space_size(s) == 9 * 4 * 6 * 3
    for c in ednas.enumerate_space(s)[::37]:
        c.net_config()


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3))
@settings(max_examples=30, deadline=None)
def test_enumeration_matches_size(a, b, c, d):
    s = space_of(a, b, c, d)
    cands = ednas.enumerate_space(s)
    assert len(cands) == len(set(cands)) == ednas.space_size(s)
    assert [ednas._decode(s, i) for i in range(len(cands))] == cands


def test_space_validation():
    with pytest.raises(ParameterError):
        SearchSpace(encoder_options=[])
    with pytest.raises(ParameterError):
        SearchSpace(batch_options=[4, 4])


def test_unknown_labels_rejected():
    with pytest.raises(ParameterError):
        Candidate("timm-skresnet34", "dec-w1-skip", 1e-4, 4).net_config()
    with pytest.raises(ParameterError):
        Candidate("enc-d3-c8", "Linknet", 1e-4, 4).net_config()
    cfg = Candidate("enc-d4-c16", "dec-w2-noskip", 1e-4, 4).net_config()
    assert (cfg.encoder_depth, cfg.base_channels, cfg.decoder_width_mult, cfg.skip) == (4, 16, 2, False)


def test_sampling_single_and_keyed():
    one = space_of(1, 1, 1, 1)
    assert ednas.sample_candidate(one, RngStream(0)) == ednas.enumerate_space(one)[0]
    s = RngStream(4, "sample", item_id=2)
    assert ednas.sample_candidate(SMALL, s) == ednas.sample_candidate(SMALL, s)


def test_without_replacement_exhausts_in_eight():
    history = []
    for t in range(8):
        history.append(ednas.sample_candidate(SMALL, RngStream(1, item_id=t), True, history))
    assert len(set(history)) == 8 == ednas.space_size(SMALL)
    with pytest.raises(ExhaustedError):
        ednas.sample_candidate(SMALL, RngStream(1, item_id=8), True, history)


def test_with_replacement_coverage():
    s = space_of(2, 2, 1, 1)
    seen = {ednas.sample_candidate(s, RngStream(2, item_id=t)) for t in range(200)}
    assert len(seen) == 4


def hash_iou(c: Candidate, stream=None) -> float:
    key = f"{c.encoder_label}|{c.decoder_label}|{c.lr!r}|{c.batch_size}".encode()
    return int(hashlib.sha256(key).hexdigest()[:8], 16) / 0xFFFFFFFF


def test_brute_force_argmax_and_sort():
    board, trials = ednas.random_search(SMALL, 8, stream=RngStream(5), without_replacement=True, evaluator=hash_iou)
    brute = sorted(ednas.enumerate_space(SMALL), key=hash_iou, reverse=True)
    best = board.best()
    assert (best.encoder_label, best.decoder_label, best.lr, best.batch_size) == \
        (brute[0].encoder_label, brute[0].decoder_label, brute[0].lr, brute[0].batch_size)
    oracle = sorted(trials, key=lambda t: (-t.test_iou, t.trial))
    assert [r.trial for r in board.rows] == [t.trial for t in oracle]
    assert [r.rank for r in board.rows] == list(range(1, 9))


def test_competition_ranking_on_ties():
    c = ednas.enumerate_space(SMALL)
    board = Leaderboard([Trial(0, c[0], 0.5, False), Trial(1, c[1], 0.9, False),
                         Trial(2, c[2], 0.90001, False), Trial(3, c[3], 0.1, False)])
    assert [(r.trial, r.rank) for r in board.rows] == [(2, 1), (1, 1), (0, 3), (3, 4)]


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=20))
@settings(max_examples=50, deadline=None)
def test_leaderboard_sorted_after_every_insert(ious):
    c = ednas.enumerate_space(SMALL)[0]
    board = Leaderboard()
    for i, v in enumerate(ious):
        board.insert(Trial(i, c, v, False))
        vals = [r.test_iou for r in board.rows]
        assert vals == sorted(vals, reverse=True)
        ranks = [r.rank for r in board.rows]
        assert ranks[0] == 1 and all(b >= a for a, b in itertools.pairwise(ranks))


def test_best_monotone_in_trials():
    s = space_of(5, 4, 6, 3)
    bests = [ednas.random_search(s, n, stream=RngStream(8), evaluator=hash_iou)[0].best().test_iou
             for n in range(1, 25)]
    assert all(b >= a for a, b in itertools.pairwise(bests))


def test_single_trial():
    board, trials = ednas.random_search(SMALL, 1, stream=RngStream(0), evaluator=hash_iou)
    assert len(board) == 1 and board.best().rank == 1


@pytest.fixture(scope="module")
def tiny_sets():
    d = generate_dataset(12, 16, 3)
    return d[:8], d[8:]


def test_evaluate_candidate_deterministic(tiny_sets):
    tr, te = tiny_sets
    c = Candidate("enc-d3-c4", "dec-w1-skip", 4e-4, 4)
    a = ednas.evaluate_candidate(c, tr, te, 1, RngStream(1))
    assert a == ednas.evaluate_candidate(c, tr, te, 1, RngStream(1))
    assert not a.failed and 0.0 <= a.test_iou <= 1.0


def test_evaluate_untrained_recorded(tiny_sets):
    tr, te = tiny_sets
    ev = ednas.evaluate_candidate(Candidate("enc-d3-c4", "dec-w1-skip", 4e-4, 4), tr, te, 0, RngStream(1))
    assert isinstance(ev, Evaluation) and not ev.failed


def test_too_deep_candidate_fails(tiny_sets):
    tr, te = tiny_sets
    ev = ednas.evaluate_candidate(Candidate("enc-d5-c4", "dec-w1-skip", 4e-4, 4), tr, te, 1)
    assert ev.failed and ev.test_iou == 0.0 and "ShapeError" in ev.message


def test_table_row_fixture():
    row = ednas.parse_row("1st | 87.00 % | 4 | 4e-5 | timm-skresnet34 | Linknet")
    assert (row.rank, row.batch_size, row.lr, row.encoder_label, row.decoder_label) == \
        (1, 4, 4e-5, "timm-skresnet34", "Linknet")
    assert row.test_iou == pytest.approx(0.87)
    assert ednas.format_row(row) == ("1st", "87.00 %", "4", "4e-05", "timm-skresnet34", "Linknet")
    assert ednas.parse_row(" | ".join(ednas.format_row(row))) == row


def test_ordinals():
    assert [ednas._ordinal(n) for n in (1, 2, 3, 4, 11, 12, 13, 21, 22, 101)] == \
        ["1st", "2nd", "3rd", "4th", "11th", "12th", "13th", "21st", "22nd", "101st"]


def test_format_table_top_rows():
    board, _ = ednas.random_search(SMALL, 8, stream=RngStream(5), without_replacement=True, evaluator=hash_iou)
    lines = ednas.format_table(board, top=5).splitlines()
    assert len(lines) == 6 and lines[0].startswith("Rank")
    assert lines[1].startswith("1st")
