"""Mini-batch training loop for the three model kinds.

One logical thread over batches; every stochastic draw (init, shuffles,
dropout) comes from a single seeded generator, so a (seed, config, data)
triple fixes every logged number bitwise.
"""

import dataclasses

import numpy as np

from ..decode import ctc_beam_decode, ctc_greedy_decode
from ..errors import DataError, ParameterError
from ..losses import ctc_loss, diagonal_prior, mtl_fa, mtl_fc
from ..metrics import per
from .layers import sinusoidal_pe
from .models import (
    MODEL_KINDS,
    aptai_forward,
    aptai_loss_and_grads,
    faptai_stage1_forward,
    faptai_stage1_loss_and_grads,
    faptai_stage2_forward,
    faptai_stage2_loss_and_grads,
    init_params,
    merge_stage1,
    smoothing_kernel,
)
from .optim import AdamState, adam_step, lr_schedule


def default_dropout(kind):
    return {"aptai": 0.2, "faptai-stage1": 0.1, "faptai-stage2": 0.0}[kind]


def selection_metric_name(kind):
    return "per" if kind == "faptai-stage1" else "tv_rmse"


def resolve_train_section(kind, train_cfg):
    """Fill per-kind defaults (dropout, selection metric) into a copy."""
    resolved = dataclasses.replace(train_cfg)
    if resolved.dropout < 0:
        resolved.dropout = default_dropout(kind)
    if resolved.selection_metric == "auto":
        resolved.selection_metric = selection_metric_name(kind)
    return resolved


def tv_rmse_scalar(pred_values, truth_values):
    """Mean over channels of the per-channel RMSE (normalized units)."""
    per_channel = np.sqrt(np.mean((pred_values - truth_values) ** 2, axis=0))
    return float(per_channel.mean())


def _require_features(utts):
    for u in utts:
        if u.features is None:
            raise DataError(f"{u.utt_id}: no features; run the frontend first")


def _batches(order, size):
    for i in range(0, len(order), size):
        yield order[i:i + size]


def stage2_inputs(utts, stage1_params, model_cfg, n_max, beam_width,
                  teacher_forcing=False):
    """Precompute what stage-2 consumes: frozen hidden states and the
    decoded (or ground-truth) phoneme sequence per utterance.

    Decoded sequences are clipped to n_max; an empty decode falls back to
    the ground-truth sequence so the aligner always has at least one row.
    """
    hiddens, seqs = [], []
    for u in utts:
        logits, cache = faptai_stage1_forward(u.features, stage1_params,
                                              model_cfg)
        hiddens.append(cache["hidden"])
        if teacher_forcing:
            seq = list(u.seq)
        else:
            seq = ctc_beam_decode(logits, beam_width=beam_width)
            if not seq:
                seq = list(u.seq)
        seqs.append(seq[:n_max])
    return hiddens, seqs


def train(kind, train_utts, val_utts, run_cfg, n_labels, stage1_params=None):
    """Train one model kind; returns (best params, log rows, best epoch).

    The retained checkpoint minimizes the validation selection metric
    (TV RMSE, or PER for the sequence-recognizer stage); ties keep the
    earlier epoch. For faptai-stage2 the returned dict also carries the
    frozen stage-1 tensors under the 'stage1.' prefix, untouched.
    """
    if kind not in MODEL_KINDS:
        raise ParameterError(f"unknown model kind '{kind}'")
    if not train_utts or not val_utts:
        raise DataError("train and validation splits must be nonempty")
    _require_features(train_utts)
    _require_features(val_utts)
    if kind == "faptai-stage2" and stage1_params is None:
        raise ParameterError("faptai-stage2 needs trained stage-1 parameters")

    tc = resolve_train_section(kind, run_cfg.train)
    model_cfg = run_cfg.model
    kernel = smoothing_kernel(run_cfg.smoothing)
    rng = np.random.default_rng(tc.seed)
    params = init_params(kind, model_cfg, n_labels, rng)

    pe = None
    hiddens_train = seqs_train = hiddens_val = seqs_val = None
    priors_train = priors_val = None
    if kind == "faptai-stage2":
        pe = sinusoidal_pe(tc.n_max, model_cfg.attn_dim)
        hiddens_train, seqs_train = stage2_inputs(
            train_utts, stage1_params, model_cfg, tc.n_max,
            run_cfg.metrics.beam_width, teacher_forcing=tc.teacher_forcing,
        )
        hiddens_val, seqs_val = stage2_inputs(
            val_utts, stage1_params, model_cfg, tc.n_max,
            run_cfg.metrics.beam_width, teacher_forcing=tc.teacher_forcing,
        )
        if tc.diag_prior_width > 0:
            priors_train = [_prior(seqs_train[i], u.n_frames, tc)
                            for i, u in enumerate(train_utts)]
            priors_val = [_prior(seqs_val[i], u.n_frames, tc)
                          for i, u in enumerate(val_utts)]

    state = AdamState()
    log_rows = []
    best_metric = None
    best_params = None
    best_epoch = -1

    for epoch in range(tc.epochs):
        lr = tc.learning_rate * lr_schedule(epoch, tc)
        order = rng.permutation(len(train_utts))
        epoch_losses = []
        for batch in _batches(order, tc.batch_size):
            acc = {}
            batch_loss = 0.0
            for idx in batch:
                u = train_utts[idx]
                loss, grads = _loss_and_grads(
                    kind, u, idx, params, model_cfg, kernel, tc, rng,
                    stage1_params, hiddens_train, seqs_train, priors_train, pe,
                    train=True,
                )
                batch_loss += loss
                for name, g in grads.items():
                    acc[name] = acc.get(name, 0.0) + g
            scale = 1.0 / len(batch)
            for name in acc:
                acc[name] = acc[name] * scale
            epoch_losses.append(batch_loss * scale)
            if lr > 0:
                params, state = adam_step(params, acc, state, lr)

        val_loss, val_metric = _validate(
            kind, val_utts, params, model_cfg, kernel, tc,
            stage1_params, hiddens_val, seqs_val, priors_val, pe,
        )
        train_loss = float(np.mean(epoch_losses))
        log_rows.append({
            "epoch": epoch,
            "lr_mult": lr_schedule(epoch, tc),
            "train_loss": train_loss,
            "val_loss": val_loss,
            f"val_{tc.selection_metric}": val_metric,
        })
        # metric ties (a saturated PER, say) break on validation loss, so a
        # better-converged probability model wins; further ties keep the
        # earlier epoch
        score = (val_metric, val_loss)
        if best_metric is None or score < best_metric:
            best_metric = score
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}

    if kind == "faptai-stage2":
        best_params = merge_stage1(stage1_params, best_params)
    return best_params, log_rows, best_epoch


def _prior(seq, n_frames, tc):
    n_eff = len(seq)
    bias = np.zeros((tc.n_max, n_frames))
    bias[:n_eff] = diagonal_prior(n_eff, n_frames, tc.diag_prior_width)
    return bias


def _loss_and_grads(kind, utt, idx, params, model_cfg, kernel, tc, rng,
                    stage1_params, hiddens, seqs, priors, pe, train):
    dropout = tc.dropout if train else 0.0
    if kind == "aptai":
        return aptai_loss_and_grads(
            utt.features, np.asarray(utt.alignment.expand()), utt.tv.values,
            params, model_cfg, kernel, tc.lambda_mtl,
            dropout=dropout, rng=rng if train else None,
        )
    if kind == "faptai-stage1":
        return faptai_stage1_loss_and_grads(
            utt.features, utt.seq, params, model_cfg,
            dropout=dropout, rng=rng if train else None,
        )
    loss, grads, _ = faptai_stage2_loss_and_grads(
        hiddens[idx], seqs[idx], utt.tv.values, params, model_cfg,
        tc.n_max, kernel, tc.lambda_mtl, pe=pe,
        score_bias=None if priors is None else priors[idx],
    )
    return loss, grads


def _validate(kind, val_utts, params, model_cfg, kernel, tc,
              stage1_params, hiddens_val, seqs_val, priors_val, pe):
    losses, metrics = [], []
    for i, u in enumerate(val_utts):
        if kind == "aptai":
            tv_pred, logits, _ = aptai_forward(
                u.features, params, model_cfg, kernel
            )
            res = mtl_fc(logits, np.asarray(u.alignment.expand()),
                         tv_pred, u.tv.values, tc.lambda_mtl)
            losses.append(res.loss)
            metrics.append(tv_rmse_scalar(tv_pred, u.tv.values))
        elif kind == "faptai-stage1":
            logits, _ = faptai_stage1_forward(u.features, params, model_cfg)
            losses.append(ctc_loss(logits, u.seq).loss)
            metrics.append(per(u.seq, ctc_greedy_decode(logits)))
        else:
            attn_eff, tv_pred, cache = faptai_stage2_forward(
                hiddens_val[i], seqs_val[i], params, model_cfg, tc.n_max,
                kernel, pe=pe,
                score_bias=None if priors_val is None else priors_val[i],
            )
            log_attn = cache["attn"]["log_attn_tn"].T[:cache["n_eff"]]
            res = mtl_fa(log_attn, tv_pred, u.tv.values, tc.lambda_mtl)
            losses.append(res.loss)
            metrics.append(tv_rmse_scalar(tv_pred, u.tv.values))
    return float(np.mean(losses)), float(np.mean(metrics))
