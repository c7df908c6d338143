"""Model assemblies: frame-classification model (encoder + phoneme and
trajectory heads) and the two-stage forced-alignment model (encoder + blank
sequence head; frozen stage-1 hidden states + attention aligner + BiLSTM
trajectory head).

Each assembly exposes forward (with cache) and backward (from output
gradients to parameter gradients) so losses stay composable, plus a
loss_and_grads convenience used by the training loop.
"""

import numpy as np

from ..errors import ParameterError
from ..losses import mtl_fa, mtl_fc, ctc_loss
from ..signals import smooth_columns, smooth_columns_adjoint, windowed_sinc_kernel
from .layers import (
    bilstm_backward,
    bilstm_forward,
    cross_attention,
    cross_attention_backward,
    embed_phonemes,
    embed_phonemes_backward,
    encoder_forward,
    encoder_backward,
)

STAGE1_PREFIX = "stage1."

MODEL_KINDS = ("aptai", "faptai-stage1", "faptai-stage2")


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _encoder_params(rng, model_cfg, prefix="enc"):
    params = {}
    widths = [model_cfg.feature_dim] + [model_cfg.encoder_width] * model_cfg.encoder_layers
    for i in range(model_cfg.encoder_layers):
        params[f"{prefix}.w{i}"] = _glorot(rng, widths[i], widths[i + 1])
        params[f"{prefix}.b{i}"] = np.zeros(widths[i + 1])
    return params


def init_params(kind, model_cfg, n_labels, rng):
    """Fresh parameter dictionary for a model kind.

    faptai-stage2 initializes only its own parameter groups; the frozen
    stage-1 tensors are merged in under the 'stage1.' prefix by the caller.
    """
    if kind not in MODEL_KINDS:
        raise ParameterError(f"unknown model kind '{kind}'")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    d = model_cfg.encoder_width
    a = model_cfg.attn_dim
    h = model_cfg.lstm_hidden
    params = {}
    if kind == "aptai":
        params.update(_encoder_params(rng, model_cfg))
        params["phone.w"] = _glorot(rng, d, n_labels)
        params["phone.b"] = np.zeros(n_labels)
        params["tv.w"] = _glorot(rng, d, 9)
        params["tv.b"] = np.zeros(9)
    elif kind == "faptai-stage1":
        params.update(_encoder_params(rng, model_cfg))
        params["ctc.w"] = _glorot(rng, d, n_labels + 1)
        params["ctc.b"] = np.zeros(n_labels + 1)
        # start the blank slightly suppressed: steers optimization away from
        # the blank-collapse local optimum that deletes whole segments
        params["ctc.b"][-1] = -3.0
    else:
        params["embed.table"] = rng.normal(0.0, 0.1, size=(n_labels + 1, a))
        params["attn.wq"] = _glorot(rng, d, a)
        params["attn.wo"] = _glorot(rng, 2 * a, 2 * a)
        params["attn.bo"] = np.zeros(2 * a)
        for direction in ("fw", "bw"):
            params[f"lstm.{direction}.wx"] = _glorot(rng, 2 * a, 4 * h)
            params[f"lstm.{direction}.wh"] = _glorot(rng, h, 4 * h)
            params[f"lstm.{direction}.b"] = np.zeros(4 * h)
        params["tvhead.w"] = _glorot(rng, 2 * h, 9)
        params["tvhead.b"] = np.zeros(9)
    return params


def smoothing_kernel(smoothing_cfg):
    return windowed_sinc_kernel(smoothing_cfg.cutoff_fraction,
                                smoothing_cfg.kernel_len)


def param_shapes(kind, model_cfg, n_labels):
    """Expected tensor shapes per model kind, for checkpoint validation."""
    d = model_cfg.encoder_width
    a = model_cfg.attn_dim
    h = model_cfg.lstm_hidden
    shapes = {}

    def encoder(prefix=""):
        widths = [model_cfg.feature_dim] + \
            [model_cfg.encoder_width] * model_cfg.encoder_layers
        for i in range(model_cfg.encoder_layers):
            shapes[f"{prefix}enc.w{i}"] = (widths[i], widths[i + 1])
            shapes[f"{prefix}enc.b{i}"] = (widths[i + 1],)

    if kind == "aptai":
        encoder()
        shapes.update({"phone.w": (d, n_labels), "phone.b": (n_labels,),
                       "tv.w": (d, 9), "tv.b": (9,)})
    elif kind == "faptai-stage1":
        encoder()
        shapes.update({"ctc.w": (d, n_labels + 1), "ctc.b": (n_labels + 1,)})
    elif kind == "faptai-stage2":
        encoder(STAGE1_PREFIX)
        shapes.update({
            f"{STAGE1_PREFIX}ctc.w": (d, n_labels + 1),
            f"{STAGE1_PREFIX}ctc.b": (n_labels + 1,),
            "embed.table": (n_labels + 1, a),
            "attn.wq": (d, a), "attn.wo": (2 * a, 2 * a), "attn.bo": (2 * a,),
            "tvhead.w": (2 * h, 9), "tvhead.b": (9,),
        })
        for direction in ("fw", "bw"):
            shapes[f"lstm.{direction}.wx"] = (2 * a, 4 * h)
            shapes[f"lstm.{direction}.wh"] = (h, 4 * h)
            shapes[f"lstm.{direction}.b"] = (4 * h,)
    else:
        raise ParameterError(f"unknown model kind '{kind}'")
    return shapes


# ---------------------------------------------------------------------------
# frame-classification model


def aptai_forward(features, params, model_cfg, kernel, dropout=0.0, rng=None):
    """Encoder -> phoneme logits (T, C) and smoothed trajectory (T, 9).

    The fixed sinc smoothing sits inside the forward pass, so the MSE loss
    is computed on the smoothed output.
    """
    hidden, enc_cache = encoder_forward(
        features, params, n_layers=model_cfg.encoder_layers,
        dropout=dropout, rng=rng,
    )
    logits = hidden @ params["phone.w"] + params["phone.b"]
    tv_raw = hidden @ params["tv.w"] + params["tv.b"]
    tv_pred = smooth_columns(tv_raw, kernel)
    cache = {"enc": enc_cache, "hidden": hidden, "kernel": kernel,
             "n_frames": tv_raw.shape[0]}
    return tv_pred, logits, cache


def aptai_backward(d_logits, d_tv_pred, cache, params):
    d_tv_raw = smooth_columns_adjoint(d_tv_pred, cache["kernel"],
                                      cache["n_frames"])
    hidden = cache["hidden"]
    grads = {
        "phone.w": hidden.T @ d_logits,
        "phone.b": d_logits.sum(axis=0),
        "tv.w": hidden.T @ d_tv_raw,
        "tv.b": d_tv_raw.sum(axis=0),
    }
    d_hidden = d_logits @ params["phone.w"].T + d_tv_raw @ params["tv.w"].T
    enc_grads, _ = encoder_backward(d_hidden, cache["enc"], params)
    grads.update(enc_grads)
    return grads


def aptai_loss_and_grads(utt_features, targets, tv_truth, params, model_cfg,
                         kernel, lam, dropout=0.0, rng=None):
    tv_pred, logits, cache = aptai_forward(
        utt_features, params, model_cfg, kernel, dropout=dropout, rng=rng
    )
    result = mtl_fc(logits, targets, tv_pred, tv_truth, lam)
    grads = aptai_backward(result.grads["logits"], result.grads["pred"],
                           cache, params)
    return result.loss, grads


# ---------------------------------------------------------------------------
# stage-1: blank-augmented sequence head


def faptai_stage1_forward(features, params, model_cfg, dropout=0.0, rng=None):
    """Encoder -> (T, C+1) logits, blank last."""
    hidden, enc_cache = encoder_forward(
        features, params, n_layers=model_cfg.encoder_layers,
        dropout=dropout, rng=rng,
    )
    logits = hidden @ params["ctc.w"] + params["ctc.b"]
    return logits, {"enc": enc_cache, "hidden": hidden}


def faptai_stage1_backward(d_logits, cache, params):
    hidden = cache["hidden"]
    grads = {
        "ctc.w": hidden.T @ d_logits,
        "ctc.b": d_logits.sum(axis=0),
    }
    d_hidden = d_logits @ params["ctc.w"].T
    enc_grads, _ = encoder_backward(d_hidden, cache["enc"], params)
    grads.update(enc_grads)
    return grads


def faptai_stage1_loss_and_grads(features, labels, params, model_cfg,
                                 dropout=0.0, rng=None):
    logits, cache = faptai_stage1_forward(features, params, model_cfg,
                                          dropout=dropout, rng=rng)
    result = ctc_loss(logits, labels)
    grads = faptai_stage1_backward(result.grads["logits"], cache, params)
    return result.loss, grads


# ---------------------------------------------------------------------------
# stage-2: attention aligner + BiLSTM trajectory head


def split_stage1(params):
    """Split a combined stage-2 parameter dict into (stage1, stage2) views."""
    stage1 = {k[len(STAGE1_PREFIX):]: v for k, v in params.items()
              if k.startswith(STAGE1_PREFIX)}
    stage2 = {k: v for k, v in params.items() if not k.startswith(STAGE1_PREFIX)}
    return stage1, stage2


def merge_stage1(stage1_params, stage2_params):
    merged = {STAGE1_PREFIX + k: v for k, v in stage1_params.items()}
    merged.update(stage2_params)
    return merged


def faptai_stage2_forward(hidden, seq, params, model_cfg, n_max, kernel,
                          pe=None, score_bias=None):
    """Frozen hidden states + phoneme sequence -> (A, tv_pred, cache).

    A is (n_eff, T): alignment rows for the real (unpadded) sequence with
    columns summing to 1. tv_pred is the smoothed (T, 9) trajectory from
    the BiLSTM head. score_bias optionally adds a fixed (n_max, T) log-space
    prior to the attention scores before the softmax.
    """
    p, pad_mask, emb_cache = embed_phonemes(seq, params, n_max, pe=pe)
    attn_full, context, attn_cache = cross_attention(
        hidden, p, params, pad_mask, score_bias=score_bias
    )
    lstm_out, lstm_cache = bilstm_forward(context, params)
    tv_raw = lstm_out @ params["tvhead.w"] + params["tvhead.b"]
    tv_pred = smooth_columns(tv_raw, kernel)
    n_eff = len(seq)
    cache = {
        "emb": emb_cache, "attn": attn_cache, "lstm": lstm_cache,
        "lstm_out": lstm_out, "kernel": kernel, "n_frames": tv_raw.shape[0],
        "n_eff": n_eff, "n_max": n_max,
    }
    return attn_full[:n_eff], tv_pred, cache


def faptai_stage2_backward(d_log_attn_eff, d_tv_pred, cache, params):
    """Gradients of the stage-2 parameters.

    d_log_attn_eff is the alignment-loss gradient w.r.t. log A over the
    real rows ((n_eff, T)); pad rows receive zero. Stage-1 parameters do
    not appear here at all: nothing flows into them.
    """
    d_tv_raw = smooth_columns_adjoint(d_tv_pred, cache["kernel"],
                                      cache["n_frames"])
    lstm_out = cache["lstm_out"]
    grads = {
        "tvhead.w": lstm_out.T @ d_tv_raw,
        "tvhead.b": d_tv_raw.sum(axis=0),
    }
    d_lstm_out = d_tv_raw @ params["tvhead.w"].T
    lstm_grads, d_context = bilstm_backward(d_lstm_out, cache["lstm"], params)
    grads.update(lstm_grads)

    t_frames = d_context.shape[1]
    d_log_attn = np.zeros((cache["n_max"], t_frames))
    d_log_attn[:cache["n_eff"]] = d_log_attn_eff
    attn_grads, _, d_p = cross_attention_backward(
        d_context, d_log_attn, cache["attn"], params
    )
    grads.update(attn_grads)
    grads.update(embed_phonemes_backward(d_p, cache["emb"]))
    return grads


def faptai_stage2_loss_and_grads(hidden, seq, tv_truth, params, model_cfg,
                                 n_max, kernel, lam, pe=None, score_bias=None):
    attn_eff, tv_pred, cache = faptai_stage2_forward(
        hidden, seq, params, model_cfg, n_max, kernel, pe=pe,
        score_bias=score_bias,
    )
    log_attn = cache["attn"]["log_attn_tn"].T[:cache["n_eff"]]
    result = mtl_fa(log_attn, tv_pred, tv_truth, lam)
    grads = faptai_stage2_backward(result.grads["log_attn"],
                                   result.grads["pred"], cache, params)
    return result.loss, grads, attn_eff
