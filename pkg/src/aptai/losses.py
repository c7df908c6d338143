"""Training objectives with exact analytic gradients.

Frame cross-entropy, trajectory MSE and their weighted composite for the
frame-classification recipe; the blank-based sequence loss (forward-backward
over the blank-augmented label lattice) for stage-1; and the monotone
forward-sum alignment loss plus composite for stage-2.

Both lattice losses run entirely in log space. The path sets they marginalize
over are never materialized; brute-force enumerators live in the test suite
as independent oracles.
"""

import numpy as np
from dataclasses import dataclass, field

from .errors import FeasibilityError, ParameterError, ShapeError


@dataclass
class LossResult:
    loss: float
    grads: dict = field(default_factory=dict)


def log_softmax(x, axis=-1):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(x, axis=-1):
    return np.exp(log_softmax(x, axis=axis))


def _values(traj):
    # Accept TvTrajectory or plain array.
    return np.asarray(getattr(traj, "values", traj), dtype=float)


def frame_ce(logits, targets) -> LossResult:
    """Mean per-frame cross-entropy of softmax(logits) against target labels.

    Gradient w.r.t. logits is (softmax - onehot) / T.
    """
    logits = np.asarray(logits, dtype=float)
    targets = np.asarray(targets, dtype=int)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise ShapeError("logits must be (T, C) with T >= 1")
    t_frames, n_cls = logits.shape
    if targets.shape != (t_frames,):
        raise ShapeError(f"targets must be length {t_frames}")
    if targets.min() < 0 or targets.max() >= n_cls:
        raise IndexError("target label out of range")
    logp = log_softmax(logits, axis=1)
    loss = -float(np.mean(logp[np.arange(t_frames), targets]))
    grad = np.exp(logp)
    grad[np.arange(t_frames), targets] -= 1.0
    grad /= t_frames
    return LossResult(loss=loss, grads={"logits": grad})


def tv_mse(pred, truth) -> LossResult:
    """Squared error summed over channels, averaged over frames.

    Gradient w.r.t. pred is 2 (pred - truth) / T.
    """
    p, y = _values(pred), _values(truth)
    if p.shape != y.shape:
        raise ShapeError(f"shape mismatch: {p.shape} vs {y.shape}")
    rate_p = getattr(pred, "rate", None)
    rate_y = getattr(truth, "rate", None)
    if rate_p is not None and rate_y is not None and rate_p != rate_y:
        raise ShapeError("frame rates differ")
    t_frames = p.shape[0]
    diff = p - y
    loss = float(np.sum(diff ** 2) / t_frames)
    return LossResult(loss=loss, grads={"pred": 2.0 * diff / t_frames})


def mtl_fc(logits, targets, pred, truth, lam) -> LossResult:
    """Frame cross-entropy plus lam * trajectory MSE."""
    if lam < 0:
        raise ParameterError("task weight must be nonnegative")
    ce = frame_ce(logits, targets)
    mse = tv_mse(pred, truth)
    return LossResult(
        loss=ce.loss + lam * mse.loss,
        grads={"logits": ce.grads["logits"], "pred": lam * mse.grads["pred"]},
    )


def _augmented_labels(labels, blank):
    aug = np.empty(2 * len(labels) + 1, dtype=int)
    aug[0::2] = blank
    aug[1::2] = labels
    return aug


def ctc_feasible_length(labels):
    """Minimum frame count: one frame per label plus a separating blank
    between immediate repeats."""
    labels = list(labels)
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_loss(logits, labels, blank=None) -> LossResult:
    """Negative log total probability of all frame paths collapsing to the
    label sequence (repeats removed, then blanks removed).

    Computed by the forward recursion over the 2N+1 blank-augmented state
    lattice in log space; the gradient w.r.t. logits comes from the
    forward-backward state posterior: softmax - posterior.
    """
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 2:
        raise ShapeError("logits must be (T, C) including the blank column")
    t_frames, n_cls = logits.shape
    if blank is None:
        blank = n_cls - 1
    labels = [int(c) for c in labels]
    if len(labels) == 0:
        raise ParameterError("label sequence must be nonempty")
    if any(c == blank for c in labels):
        raise ParameterError("label sequence must not contain the blank")
    if any(not 0 <= c < n_cls for c in labels):
        raise IndexError("label out of range")
    if t_frames < ctc_feasible_length(labels):
        raise FeasibilityError(
            f"{t_frames} frames cannot realize {len(labels)} labels"
        )

    aug = _augmented_labels(labels, blank)
    n_states = len(aug)
    logp = log_softmax(logits, axis=1)
    emit = logp[:, aug]  # (T, S)

    # skip transition allowed into non-blank states that differ from the
    # state two back
    can_skip = np.zeros(n_states, dtype=bool)
    can_skip[2:] = (aug[2:] != blank) & (aug[2:] != aug[:-2])

    neg = -np.inf
    alpha = np.full((t_frames, n_states), neg)
    alpha[0, 0] = emit[0, 0]
    if n_states > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, t_frames):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([neg], prev[:-1]))
        skip = np.concatenate(([neg, neg], prev[:-2]))
        skip = np.where(can_skip, skip, neg)
        alpha[t] = np.logaddexp(np.logaddexp(stay, step), skip) + emit[t]

    total = np.logaddexp(alpha[-1, -1], alpha[-1, -2] if n_states > 1 else neg)
    if not np.isfinite(total):
        raise FeasibilityError("no feasible path (infinite loss)")

    beta = np.full((t_frames, n_states), neg)
    beta[-1, -1] = 0.0
    if n_states > 1:
        beta[-1, -2] = 0.0
    for t in range(t_frames - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [neg]))
        skip = np.concatenate((nxt[2:], [neg, neg]))
        skip_ok = np.zeros(n_states, dtype=bool)
        skip_ok[:-2] = can_skip[2:]
        skip = np.where(skip_ok, skip, neg)
        beta[t] = np.logaddexp(np.logaddexp(stay, step), skip)

    # state posterior -> per-class posterior, accumulated in linear space
    # (each term is <= 1 after subtracting the total, so no overflow)
    post_state = np.exp(alpha + beta - total)
    post = np.zeros((t_frames, n_cls))
    for s in range(n_states):
        post[:, aug[s]] += post_state[:, s]
    grad = np.exp(logp) - post
    return LossResult(loss=-float(total), grads={"logits": grad})


def forward_sum(log_attn) -> LossResult:
    """Negative log of the summed probability of every monotone no-skip path
    through an N x T attention matrix.

    Paths start at phoneme 0 on the first frame, end at phoneme N-1 on the
    last, and advance by at most one phoneme per frame, so every phoneme
    covers at least one frame. The gradient w.r.t. log_attn is minus the
    path posterior from the forward-backward recursion.
    """
    la = np.asarray(log_attn, dtype=float)
    if la.ndim != 2:
        raise ShapeError("log_attn must be (N, T)")
    n_ph, t_frames = la.shape
    if n_ph < 1 or t_frames < 1:
        raise ShapeError("log_attn must be nonempty")
    if n_ph > t_frames:
        raise FeasibilityError(f"{n_ph} phonemes cannot tile {t_frames} frames")

    neg = -np.inf
    alpha = np.full((n_ph, t_frames), neg)
    alpha[0, 0] = la[0, 0]
    for t in range(1, t_frames):
        stay = alpha[:, t - 1]
        step = np.concatenate(([neg], alpha[:-1, t - 1]))
        alpha[:, t] = np.logaddexp(stay, step) + la[:, t]
    total = alpha[-1, -1]
    if not np.isfinite(total):
        raise FeasibilityError("no path with finite log-probability")

    beta = np.full((n_ph, t_frames), neg)
    beta[-1, -1] = 0.0
    for t in range(t_frames - 2, -1, -1):
        nxt = beta[:, t + 1] + la[:, t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [neg]))
        beta[:, t] = np.logaddexp(stay, step)

    with np.errstate(invalid="ignore"):
        post = np.exp(alpha + beta - total)
    post[~np.isfinite(alpha + beta)] = 0.0
    return LossResult(loss=-float(total), grads={"log_attn": -post})


def mtl_fa(log_attn, pred, truth, lam) -> LossResult:
    """Forward-sum alignment loss plus lam * trajectory MSE."""
    if lam < 0:
        raise ParameterError("task weight must be nonnegative")
    fs = forward_sum(log_attn)
    mse = tv_mse(pred, truth)
    return LossResult(
        loss=fs.loss + lam * mse.loss,
        grads={"log_attn": fs.grads["log_attn"], "pred": lam * mse.grads["pred"]},
    )


def diagonal_prior(n_ph, t_frames, width):
    """Optional log-space Gaussian band around the n = (N/T) t diagonal,
    added to attention scores before the softmax. Off by default."""
    if width <= 0:
        raise ParameterError("prior width must be positive")
    n = np.arange(n_ph)[:, None]
    t = np.arange(t_frames)[None, :]
    center = (n_ph / t_frames) * t
    return -((n - center) ** 2) / (2.0 * width ** 2)
