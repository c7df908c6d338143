import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aptai.errors import FeasibilityError, ParameterError
from aptai.losses import (
    ctc_loss,
    diagonal_prior,
    forward_sum,
    frame_ce,
    log_softmax,
    mtl_fa,
    mtl_fc,
    softmax,
    tv_mse,
)

from oracles import ctc_brute, fd_grad, forward_sum_brute, rel_err


def column_stochastic_log(rng, n, t):
    raw = rng.normal(size=(n, t))
    return log_softmax(raw, axis=0)


# ---------------------------------------------------------------------------
# frame cross-entropy


def test_frame_ce_perfect_prediction():
    targets = np.array([0, 2, 1])
    logits = np.full((3, 3), -1e3)
    logits[np.arange(3), targets] = 1e3
    assert frame_ce(logits, targets).loss == pytest.approx(0.0, abs=1e-12)


def test_frame_ce_uniform_45_labels():
    logits = np.zeros((6, 45))
    targets = np.arange(6) % 45
    assert frame_ce(logits, targets).loss == pytest.approx(math.log(45), rel=1e-12)


def test_frame_ce_out_of_range_label():
    with pytest.raises(IndexError):
        frame_ce(np.zeros((2, 4)), [0, 4])


@pytest.mark.parametrize("seed", range(10))
def test_frame_ce_gradient(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(4, 6))
    targets = rng.integers(0, 6, size=4)
    res = frame_ce(logits, targets)
    num = fd_grad(lambda x: frame_ce(x, targets).loss, logits.copy())
    assert rel_err(res.grads["logits"], num) < 1e-4


# ---------------------------------------------------------------------------
# trajectory MSE


def test_tv_mse_zero_for_identical():
    x = np.random.default_rng(0).normal(size=(5, 9))
    assert tv_mse(x, x).loss == 0.0


def test_tv_mse_unit_offset_is_nine():
    x = np.random.default_rng(1).normal(size=(7, 9))
    assert tv_mse(x + 1.0, x).loss == pytest.approx(9.0, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_tv_mse_gradient(seed):
    rng = np.random.default_rng(seed)
    pred = rng.normal(size=(5, 9))
    truth = rng.normal(size=(5, 9))
    res = tv_mse(pred, truth)
    num = fd_grad(lambda x: tv_mse(x, truth).loss, pred.copy())
    assert rel_err(res.grads["pred"], num) < 1e-4


# ---------------------------------------------------------------------------
# composite (frame classification)


def test_mtl_fc_lambda_zero_equals_ce():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(6, 5))
    targets = rng.integers(0, 5, size=6)
    pred, truth = rng.normal(size=(6, 9)), rng.normal(size=(6, 9))
    res = mtl_fc(logits, targets, pred, truth, 0.0)
    assert res.loss == frame_ce(logits, targets).loss
    np.testing.assert_array_equal(res.grads["pred"], 0.0)


@pytest.mark.parametrize("lam", [0.4, 1.0])
def test_mtl_fc_linear_composition(lam):
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(6, 5))
    targets = rng.integers(0, 5, size=6)
    pred, truth = rng.normal(size=(6, 9)), rng.normal(size=(6, 9))
    combined = mtl_fc(logits, targets, pred, truth, lam)
    expected = frame_ce(logits, targets).loss + lam * tv_mse(pred, truth).loss
    assert combined.loss == pytest.approx(expected, abs=1e-12)


def test_mtl_negative_lambda_rejected():
    rng = np.random.default_rng(4)
    with pytest.raises(ParameterError):
        mtl_fc(np.zeros((2, 3)), [0, 1], np.zeros((2, 9)), np.zeros((2, 9)), -0.1)


# ---------------------------------------------------------------------------
# blank-lattice sequence loss


def test_ctc_single_frame_single_label():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(1, 4))  # blank = 3
    p = softmax(logits, axis=1)[0, 1]
    res = ctc_loss(logits, [1])
    assert res.loss == pytest.approx(-math.log(p), rel=1e-12)


def test_ctc_two_frames_three_paths():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(2, 3))  # labels {0, 1}, blank = 2
    p = softmax(logits, axis=1)
    paths = p[0, 0] * p[1, 0] + p[0, 0] * p[1, 2] + p[0, 2] * p[1, 0]
    assert ctc_loss(logits, [0]).loss == pytest.approx(-math.log(paths), rel=1e-12)


def test_ctc_infeasible_length():
    with pytest.raises(FeasibilityError):
        ctc_loss(np.zeros((2, 4)), [0, 1, 2])
    with pytest.raises(FeasibilityError):
        ctc_loss(np.zeros((2, 4)), [0, 0])  # repeat needs a separating blank


def test_ctc_rejects_blank_in_labels():
    with pytest.raises(ParameterError):
        ctc_loss(np.zeros((3, 4)), [0, 3])


@pytest.mark.parametrize("seed", range(10))
def test_ctc_matches_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    t_frames = int(rng.integers(2, 7))
    n_cls = int(rng.integers(3, 5))
    n_lab = int(rng.integers(1, 3))
    labels = rng.integers(0, n_cls - 1, size=n_lab).tolist()
    logits = rng.normal(size=(t_frames, n_cls))
    try:
        res = ctc_loss(logits, labels)
    except FeasibilityError:
        return
    brute = ctc_brute(softmax(logits, axis=1), labels, blank=n_cls - 1)
    assert res.loss == pytest.approx(-math.log(brute), abs=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_ctc_gradient(seed):
    rng = np.random.default_rng(200 + seed)
    logits = rng.normal(size=(6, 4))
    labels = rng.integers(0, 3, size=2).tolist()
    res = ctc_loss(logits, labels)
    num = fd_grad(lambda x: ctc_loss(x, labels).loss, logits.copy())
    assert rel_err(res.grads["logits"], num) < 1e-4


def test_ctc_shift_invariance():
    rng = np.random.default_rng(7)
    logits = rng.normal(size=(5, 4))
    labels = [0, 2]
    base = ctc_loss(logits, labels).loss
    shifted = logits + rng.normal(size=(5, 1))  # per-frame constants
    assert ctc_loss(shifted, labels).loss == pytest.approx(base, abs=1e-9)


def test_ctc_long_sequence_stays_finite():
    rng = np.random.default_rng(8)
    t_frames = 1000
    logits = rng.normal(scale=5.0, size=(t_frames, 6))
    labels = rng.integers(0, 5, size=40).tolist()
    res = ctc_loss(logits, labels)
    assert np.isfinite(res.loss)
    assert np.isfinite(res.grads["logits"]).all()


# ---------------------------------------------------------------------------
# monotone forward-sum loss


def test_forward_sum_degenerate_single_row():
    la = np.log(np.ones((1, 2)))
    assert forward_sum(la).loss == pytest.approx(0.0, abs=1e-12)


def test_forward_sum_two_by_three_two_paths():
    rng = np.random.default_rng(9)
    la = column_stochastic_log(rng, 2, 3)
    a = np.exp(la)
    total = a[0, 0] * a[0, 1] * a[1, 2] + a[0, 0] * a[1, 1] * a[1, 2]
    assert forward_sum(la).loss == pytest.approx(-math.log(total), rel=1e-10)


def test_forward_sum_infeasible():
    with pytest.raises(FeasibilityError):
        forward_sum(np.zeros((3, 2)))


@pytest.mark.parametrize("seed", range(10))
def test_forward_sum_matches_brute_force(seed):
    rng = np.random.default_rng(300 + seed)
    n_ph = int(rng.integers(1, 5))
    t_frames = int(rng.integers(n_ph, 9))
    la = column_stochastic_log(rng, n_ph, t_frames)
    brute_loss, _, _ = forward_sum_brute(la)
    assert forward_sum(la).loss == pytest.approx(brute_loss, abs=1e-6)


@pytest.mark.parametrize("seed", range(10))
def test_forward_sum_gradient(seed):
    rng = np.random.default_rng(400 + seed)
    la = column_stochastic_log(rng, 4, 8)
    res = forward_sum(la)
    num = fd_grad(lambda x: forward_sum(x).loss, la.copy())
    assert rel_err(res.grads["log_attn"], num) < 1e-4


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=30, deadline=None)
def test_forward_sum_nonnegative_on_normalized_columns(seed):
    rng = np.random.default_rng(seed)
    n_ph = int(rng.integers(1, 6))
    t_frames = int(rng.integers(n_ph, 12))
    la = column_stochastic_log(rng, n_ph, t_frames)
    assert forward_sum(la).loss >= -1e-12


def test_forward_sum_long_sequence_stays_finite():
    rng = np.random.default_rng(10)
    la = column_stochastic_log(rng, 60, 1000)
    res = forward_sum(la)
    assert np.isfinite(res.loss)
    assert np.isfinite(res.grads["log_attn"]).all()


# ---------------------------------------------------------------------------
# composite (forced alignment)


def test_mtl_fa_lambda_zero_equals_forward_sum():
    rng = np.random.default_rng(11)
    la = column_stochastic_log(rng, 3, 6)
    pred, truth = rng.normal(size=(6, 9)), rng.normal(size=(6, 9))
    assert mtl_fa(la, pred, truth, 0.0).loss == forward_sum(la).loss


def test_mtl_fa_linear_composition():
    rng = np.random.default_rng(12)
    la = column_stochastic_log(rng, 3, 6)
    pred, truth = rng.normal(size=(6, 9)), rng.normal(size=(6, 9))
    combined = mtl_fa(la, pred, truth, 0.4)
    expected = forward_sum(la).loss + 0.4 * tv_mse(pred, truth).loss
    assert combined.loss == pytest.approx(expected, abs=1e-12)


def test_diagonal_prior_shape_and_peak():
    prior = diagonal_prior(4, 12, width=2.0)
    assert prior.shape == (4, 12)
    assert prior.max() == pytest.approx(0.0)
    # band center advances with t
    assert np.argmax(prior[:, 11]) > np.argmax(prior[:, 0]) or prior.shape[0] == 1
