"""Network building blocks with hand-derived backward passes.

Every forward returns (output(s), cache); the matching backward consumes the
cache and output gradients and returns parameter gradients (plus input
gradients where a caller needs them). Gradients are exact; the test suite
verifies each against central finite differences.
"""

import numpy as np

from ..errors import FeasibilityError, ParameterError, ShapeError
from ..losses import log_softmax


def sigmoid(x):
    # exp overflow saturates to the correct limit (0), so just silence it
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# per-frame MLP encoder


def encoder_forward(features, params, prefix="enc", n_layers=2,
                    dropout=0.0, rng=None):
    """Per-frame MLP with tanh activations and optional inverted dropout.

    Deterministic whenever dropout is 0 or rng is seeded.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise ShapeError("features must be (T, F)")
    use_dropout = dropout > 0.0 and rng is not None
    acts = [x]
    tanhs, masks = [], []
    h = x
    for i in range(n_layers):
        w, b = params[f"{prefix}.w{i}"], params[f"{prefix}.b{i}"]
        if h.shape[1] != w.shape[0]:
            raise ShapeError(
                f"layer {i}: input width {h.shape[1]} != {w.shape[0]}"
            )
        z = h @ w + b
        h = np.tanh(z)
        tanhs.append(h)
        if use_dropout:
            mask = (rng.random(h.shape) >= dropout) / (1.0 - dropout)
            h = h * mask
            masks.append(mask)
        else:
            masks.append(None)
        acts.append(h)
    cache = {"acts": acts, "tanhs": tanhs, "masks": masks,
             "prefix": prefix, "n_layers": n_layers}
    return h, cache


def encoder_backward(d_hidden, cache, params):
    """Returns (param grads, gradient w.r.t. the input features)."""
    prefix, n_layers = cache["prefix"], cache["n_layers"]
    grads = {}
    g = np.asarray(d_hidden, dtype=float)
    for i in range(n_layers - 1, -1, -1):
        mask = cache["masks"][i]
        if mask is not None:
            g = g * mask
        g = g * (1.0 - cache["tanhs"][i] ** 2)
        grads[f"{prefix}.w{i}"] = cache["acts"][i].T @ g
        grads[f"{prefix}.b{i}"] = g.sum(axis=0)
        g = g @ params[f"{prefix}.w{i}"].T
    return grads, g


# ---------------------------------------------------------------------------
# positional encoding and phoneme embedding


def sinusoidal_pe(n_positions, width):
    """Standard sin/cos positional table: even columns sin(pos / 10000^(2i/d)),
    odd columns the matching cos."""
    if width % 2 != 0:
        raise ParameterError("positional encoding width must be even")
    pos = np.arange(n_positions, dtype=float)[:, None]
    i = np.arange(width // 2, dtype=float)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / width)
    pe = np.empty((n_positions, width))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def embed_phonemes(seq, params, n_max, pe=None):
    """Embedding-table lookup plus positional encoding, padded to n_max.

    Returns (P of shape (width, n_max), pad_mask, cache). The table's last
    row is the dedicated pad embedding; pad positions are masked out of
    attention downstream.
    """
    table = params["embed.table"]
    width = table.shape[1]
    seq = [int(c) for c in seq]
    if len(seq) > n_max:
        raise ParameterError(f"sequence length {len(seq)} exceeds n_max={n_max}")
    if any(not 0 <= c < table.shape[0] - 1 for c in seq):
        raise IndexError("phoneme index outside the embedding table")
    if pe is None:
        pe = sinusoidal_pe(n_max, width)
    pad_id = table.shape[0] - 1
    ids = np.full(n_max, pad_id, dtype=int)
    ids[:len(seq)] = seq
    p = (table[ids] + pe[:n_max]).T  # (width, n_max)
    pad_mask = np.zeros(n_max, dtype=bool)
    pad_mask[:len(seq)] = True
    return p, pad_mask, {"ids": ids, "table_shape": table.shape}


def embed_phonemes_backward(d_p, cache):
    """Scatter column gradients back into the embedding table."""
    ids = cache["ids"]
    d_table = np.zeros(cache["table_shape"])
    np.add.at(d_table, ids, d_p.T)
    return {"embed.table": d_table}


# ---------------------------------------------------------------------------
# cross-attention aligner


def cross_attention(hidden, p, params, pad_mask, score_bias=None):
    """Alignment matrix and per-frame context from acoustic/phoneme matching.

    hidden (T, D) is projected to (T, a); scores against the embedded
    sequence P (a, N) are softmaxed over the phoneme axis per frame, pad
    positions excluded. The context column for frame t is the projected
    acoustic vector concatenated with the attention-weighted sum of P,
    passed through a learned output projection (width stays 2a).

    score_bias optionally adds a fixed (N, T) log-space prior to the scores
    before the softmax (it carries no gradient).

    Returns (A (N, T) with columns summing to 1 and exact zeros at pads,
    context (2a, T), cache). cache['log_attn_tn'] holds log A without an
    exp/log round trip for the alignment loss.
    """
    pad_mask = np.asarray(pad_mask, dtype=bool)
    if not pad_mask.any():
        raise FeasibilityError("sequence is entirely padding")
    wq, wo, bo = params["attn.wq"], params["attn.wo"], params["attn.bo"]
    h = np.asarray(hidden, dtype=float)
    if h.shape[1] != wq.shape[0]:
        raise ShapeError("hidden width does not match the acoustic projection")
    hp = h @ wq                       # (T, a)
    scores = hp @ p                   # (T, N)
    if score_bias is not None:
        scores = scores + np.asarray(score_bias, dtype=float).T
    scores = np.where(pad_mask[None, :], scores, -np.inf)
    log_attn_tn = log_softmax(scores, axis=1)
    attn_tn = np.exp(log_attn_tn)     # exact zeros at pads
    attended = p @ attn_tn.T          # (a, T)
    pre = np.concatenate([hp.T, attended], axis=0)  # (2a, T)
    context = wo @ pre + bo[:, None]
    cache = {"hidden": h, "hp": hp, "p": p, "attn_tn": attn_tn,
             "log_attn_tn": log_attn_tn, "pre": pre, "pad_mask": pad_mask}
    return attn_tn.T, context, cache


def cross_attention_backward(d_context, d_log_attn, cache, params):
    """Backward through the attention block.

    d_log_attn is the gradient w.r.t. log A (N, T) -- the alignment loss
    differentiates the log-probabilities; rows beyond the real sequence
    must be zero. Returns (param grads, gradient w.r.t. hidden).
    """
    wq, wo = params["attn.wq"], params["attn.wo"]
    hp, p, attn_tn = cache["hp"], cache["p"], cache["attn_tn"]
    pad_mask = cache["pad_mask"]

    d_pre = wo.T @ d_context
    d_wo = d_context @ cache["pre"].T
    d_bo = d_context.sum(axis=1)
    a_dim = hp.shape[1]
    d_hp = d_pre[:a_dim].T                        # (T, a)
    d_attended = d_pre[a_dim:]                    # (a, T)

    # attended = p @ attn_tn.T, so the value path contributes (T, N) here
    d_attn_tn = (p.T @ d_attended).T
    d_p = d_attended @ attn_tn                    # (a, N)

    d_log_tn = d_log_attn.T                       # (T, N)
    row_sum_log = d_log_tn.sum(axis=1, keepdims=True)
    d_scores = d_log_tn - attn_tn * row_sum_log
    row_sum_lin = (attn_tn * d_attn_tn).sum(axis=1, keepdims=True)
    d_scores = d_scores + attn_tn * (d_attn_tn - row_sum_lin)
    d_scores[:, ~pad_mask] = 0.0

    d_hp = d_hp + d_scores @ p.T
    d_p = d_p + hp.T @ d_scores
    d_hidden = d_hp @ wq.T
    d_wq = cache["hidden"].T @ d_hp
    grads = {"attn.wq": d_wq, "attn.wo": d_wo, "attn.bo": d_bo}
    return grads, d_hidden, d_p


# ---------------------------------------------------------------------------
# bidirectional LSTM


def _lstm_run(x, wx, wh, b):
    # gate layout along the 4H axis: [input, forget, output | candidate],
    # so one sigmoid call covers the first block and one tanh the rest
    t_frames = x.shape[0]
    n_hidden = wh.shape[0]
    h = np.zeros(n_hidden)
    c = np.zeros(n_hidden)
    outs = np.empty((t_frames, n_hidden))
    # the input contribution has no recurrence: one big matmul up front
    zx = x @ wx + b
    h_prev = np.empty((t_frames, n_hidden))
    c_prev = np.empty((t_frames, n_hidden))
    gates = np.empty((t_frames, 4 * n_hidden))
    for t in range(t_frames):
        z = zx[t] + h @ wh
        gate_row = gates[t]
        gate_row[:3 * n_hidden] = sigmoid(z[:3 * n_hidden])
        gate_row[3 * n_hidden:] = np.tanh(z[3 * n_hidden:])
        i = gate_row[:n_hidden]
        f = gate_row[n_hidden:2 * n_hidden]
        o = gate_row[2 * n_hidden:3 * n_hidden]
        g = gate_row[3 * n_hidden:]
        h_prev[t], c_prev[t] = h, c
        c = f * c + i * g
        h = o * np.tanh(c)
        outs[t] = h
    i = gates[:, :n_hidden]
    f = gates[:, n_hidden:2 * n_hidden]
    g = gates[:, 3 * n_hidden:]
    hc = np.tanh(f * c_prev + i * g)
    cache = {"x": x, "h_prev": h_prev, "c_prev": c_prev, "gates": gates,
             "hc": hc}
    return outs, cache


def _lstm_run_backward(d_outs, cache, wx, wh):
    x, h_prev, c_prev = cache["x"], cache["h_prev"], cache["c_prev"]
    gates, hc = cache["gates"], cache["hc"]
    t_frames, n_hidden = h_prev.shape
    i = gates[:, :n_hidden]
    f = gates[:, n_hidden:2 * n_hidden]
    o = gates[:, 2 * n_hidden:3 * n_hidden]
    g = gates[:, 3 * n_hidden:]
    # everything that does not take part in the recurrence is vectorized
    cell_slope = o * (1.0 - hc ** 2)
    di_coef = g * i * (1.0 - i)
    df_coef = c_prev * f * (1.0 - f)
    dg_coef = i * (1.0 - g ** 2)
    do_coef = hc * o * (1.0 - o)
    dz_all = np.empty((t_frames, 4 * n_hidden))
    dh_next = np.zeros(n_hidden)
    dc_next = np.zeros(n_hidden)
    for t in range(t_frames - 1, -1, -1):
        dh = d_outs[t] + dh_next
        dc = dc_next + dh * cell_slope[t]
        dc_next = dc * f[t]
        dz = dz_all[t]
        dz[:n_hidden] = dc * di_coef[t]
        dz[n_hidden:2 * n_hidden] = dc * df_coef[t]
        dz[2 * n_hidden:3 * n_hidden] = dh * do_coef[t]
        dz[3 * n_hidden:] = dc * dg_coef[t]
        dh_next = dz @ wh.T
    # parameter and input gradients batch into single matmuls
    d_wx = x.T @ dz_all
    d_wh = h_prev.T @ dz_all
    d_b = dz_all.sum(axis=0)
    d_x = dz_all @ wx.T
    return d_wx, d_wh, d_b, d_x


def bilstm_forward(context, params):
    """Single bidirectional LSTM layer over (input_dim, T) context columns.

    Left-to-right and right-to-left passes use independent parameters;
    their hidden states are concatenated per frame into (T, 2 * hdim).
    """
    x = np.asarray(context, dtype=float).T  # (T, I)
    if x.shape[1] != params["lstm.fw.wx"].shape[0]:
        raise ShapeError("context width does not match the LSTM input size")
    fw_out, fw_steps = _lstm_run(
        x, params["lstm.fw.wx"], params["lstm.fw.wh"], params["lstm.fw.b"]
    )
    bw_out, bw_steps = _lstm_run(
        x[::-1], params["lstm.bw.wx"], params["lstm.bw.wh"], params["lstm.bw.b"]
    )
    out = np.concatenate([fw_out, bw_out[::-1]], axis=1)
    return out, {"fw_steps": fw_steps, "bw_steps": bw_steps}


def bilstm_backward(d_out, cache, params):
    """Returns (param grads, gradient w.r.t. the (input_dim, T) context)."""
    n_hidden = params["lstm.fw.wh"].shape[0]
    d_fw = np.asarray(d_out[:, :n_hidden], dtype=float)
    d_bw = np.asarray(d_out[:, n_hidden:], dtype=float)[::-1]
    gfw = _lstm_run_backward(
        d_fw, cache["fw_steps"], params["lstm.fw.wx"], params["lstm.fw.wh"]
    )
    gbw = _lstm_run_backward(
        d_bw, cache["bw_steps"], params["lstm.bw.wx"], params["lstm.bw.wh"]
    )
    grads = {
        "lstm.fw.wx": gfw[0], "lstm.fw.wh": gfw[1], "lstm.fw.b": gfw[2],
        "lstm.bw.wx": gbw[0], "lstm.bw.wh": gbw[1], "lstm.bw.b": gbw[2],
    }
    d_x = gfw[3] + gbw[3][::-1]
    return grads, d_x.T
