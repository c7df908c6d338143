import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aptai.decode import (
    Alignment,
    collapse_frames,
    ctc_beam_decode,
    ctc_greedy_decode,
    frame_decode,
    viterbi_monotonic,
)
from aptai.errors import EmptyUtteranceError, FeasibilityError, ShapeError
from aptai.losses import forward_sum, log_softmax, softmax

from oracles import ctc_marginal_argmax, forward_sum_brute


def test_frame_decode_identity_logits():
    np.testing.assert_array_equal(frame_decode(np.eye(3)), [0, 1, 2])


def test_frame_decode_tie_breaks_low():
    assert frame_decode(np.zeros((1, 5)))[0] == 0


def test_frame_decode_equals_softmax_argmax():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(10, 45))
    np.testing.assert_array_equal(
        frame_decode(logits), np.argmax(softmax(logits, axis=1), axis=1)
    )


def test_collapse_runs():
    seq, alignment = collapse_frames([4, 4, 7, 7, 7])
    assert seq == [4, 7]
    assert alignment.segments == [(4, 0, 2), (7, 2, 5)]


def test_collapse_single_frame():
    seq, alignment = collapse_frames([3])
    assert seq == [3]
    assert alignment.segments == [(3, 0, 1)]


def test_collapse_preserves_nonadjacent_repeats():
    seq, alignment = collapse_frames([1, 2, 1])
    assert seq == [1, 2, 1]
    assert len(alignment.segments) == 3


def test_collapse_empty_fails():
    with pytest.raises(EmptyUtteranceError):
        collapse_frames([])


@given(st.lists(st.integers(0, 4), min_size=1, max_size=50))
def test_collapse_expand_roundtrip(frames):
    _, alignment = collapse_frames(frames)
    np.testing.assert_array_equal(alignment.expand(), frames)


def test_alignment_invariants_enforced():
    with pytest.raises(ShapeError):
        Alignment(segments=[(0, 0, 2), (0, 2, 4)], total_frames=4)
    with pytest.raises(ShapeError):
        Alignment(segments=[(0, 0, 2), (1, 3, 4)], total_frames=4)
    with pytest.raises(ShapeError):
        Alignment(segments=[(0, 0, 2)], total_frames=4)


# ---------------------------------------------------------------------------
# greedy and beam decoding (blank = last index)


def _logits_for(rows, n_cls):
    out = np.full((len(rows), n_cls), -10.0)
    for t, c in enumerate(rows):
        out[t, c] = 10.0
    return out


def test_greedy_blank_separates_repeats():
    logits = _logits_for([0, 2, 0], 3)  # blank = 2
    assert ctc_greedy_decode(logits) == [0, 0]


def test_greedy_collapses_and_drops_blanks():
    logits = _logits_for([0, 0, 2, 1], 3)
    assert ctc_greedy_decode(logits) == [0, 1]


def test_greedy_all_blank_empty():
    logits = _logits_for([2, 2, 2], 3)
    assert ctc_greedy_decode(logits) == []


def test_beam_width_one_equals_greedy_on_peaked():
    logits = _logits_for([0, 1, 2, 1], 3) * 3
    assert ctc_beam_decode(logits, beam_width=1) == ctc_greedy_decode(logits)


@pytest.mark.parametrize("seed", range(8))
def test_beam_equals_exhaustive_marginalization(seed):
    rng = np.random.default_rng(500 + seed)
    logits = rng.normal(size=(4, 3))
    best, _ = ctc_marginal_argmax(softmax(logits, axis=1), blank=2)
    assert ctc_beam_decode(logits, beam_width=64) == best


def test_beam_beats_greedy_when_marginal_differs():
    # blank-heavy distribution: greedy collapses to empty, the marginal
    # favors emitting the label
    logits = np.log(np.array([[0.3, 0.2, 0.5], [0.3, 0.2, 0.5]]))
    assert ctc_greedy_decode(logits) == []
    assert ctc_beam_decode(logits, beam_width=64) == [0]
    # and a searched instance: first random case where greedy is suboptimal
    found = False
    for seed in range(2000):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=(4, 3))
        best, _ = ctc_marginal_argmax(softmax(logits, axis=1), blank=2)
        if ctc_greedy_decode(logits) != best:
            assert ctc_beam_decode(logits, beam_width=64) == best
            found = True
            break
    assert found, "no instance with greedy != marginal argmax in 2000 seeds"


@pytest.mark.parametrize("seed", range(6))
def test_beam_wider_is_no_worse(seed):
    rng = np.random.default_rng(600 + seed)
    logits = rng.normal(size=(6, 4))
    probs = softmax(logits, axis=1)

    def marginal(seq):
        from oracles import _path_groups

        paths, groups = _path_groups(6, 4, 3)
        rows = groups.get(tuple(seq))
        if rows is None:
            return 0.0
        chosen = paths[rows]
        return probs[np.arange(6)[None, :], chosen].prod(axis=1).sum()

    narrow = marginal(ctc_beam_decode(logits, beam_width=2))
    wide = marginal(ctc_beam_decode(logits, beam_width=32))
    assert wide >= narrow - 1e-12


# ---------------------------------------------------------------------------
# monotone Viterbi


def test_viterbi_single_phoneme_spans_all():
    la = log_softmax(np.random.default_rng(1).normal(size=(1, 6)), axis=0)
    alignment = viterbi_monotonic(la)
    assert alignment.segments == [(0, 0, 6)]


def test_viterbi_square_one_frame_each():
    rng = np.random.default_rng(2)
    la = log_softmax(rng.normal(size=(5, 5)), axis=0)
    alignment = viterbi_monotonic(la)
    assert [seg[0] for seg in alignment.segments] == [0, 1, 2, 3, 4]
    assert all(seg[2] - seg[1] == 1 for seg in alignment.segments)


def test_viterbi_infeasible():
    with pytest.raises(FeasibilityError):
        viterbi_monotonic(np.zeros((4, 3)))


@pytest.mark.parametrize("seed", range(10))
def test_viterbi_matches_brute_force_best_path(seed):
    rng = np.random.default_rng(700 + seed)
    n_ph = int(rng.integers(1, 4))
    t_frames = int(rng.integers(n_ph, 8))
    la = log_softmax(rng.normal(size=(n_ph, t_frames)), axis=0)
    _, best_path, best_lp = forward_sum_brute(la)
    alignment = viterbi_monotonic(la)
    got_path = alignment.expand()
    got_lp = sum(la[n, t] for t, n in enumerate(got_path))
    assert got_lp == pytest.approx(best_lp, abs=1e-10)
    np.testing.assert_array_equal(got_path, best_path)


@pytest.mark.parametrize("seed", range(10))
def test_viterbi_never_beats_forward_sum(seed):
    rng = np.random.default_rng(800 + seed)
    la = log_softmax(rng.normal(size=(4, 8)), axis=0)
    alignment = viterbi_monotonic(la)
    path_lp = sum(la[n, t] for t, n in enumerate(alignment.expand()))
    assert -path_lp >= forward_sum(la).loss - 1e-12


def test_viterbi_label_mapping_merges_duplicates():
    # sequence [7, 7]: two rows map to one label; adjacent spans merge
    la = np.log(np.array([[0.9, 0.6, 0.1], [0.1, 0.4, 0.9]]))
    alignment = viterbi_monotonic(la, labels=[7, 7])
    assert alignment.segments == [(7, 0, 3)]
