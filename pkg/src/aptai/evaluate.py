"""Per-utterance and fold-level evaluation shared by the CLI and tests."""

import numpy as np

from .config import TV_CHANNELS
from .decode import Alignment, collapse_frames, ctc_beam_decode, frame_decode, \
    viterbi_monotonic
from .errors import ParameterError
from .metrics import frame_overlap, mean_pcc, pcc, per, rmse
from .net.layers import sinusoidal_pe
from .net.models import (
    aptai_forward,
    faptai_stage1_forward,
    faptai_stage2_forward,
    smoothing_kernel,
    split_stage1,
)


def predict(kind, params, features, run_cfg):
    """Run one utterance through a trained model.

    Returns a dict with tv_pred (T, 9 normalized, absent for stage-1),
    seq (decoded label indices) and alignment (absent for stage-1).
    """
    model_cfg = run_cfg.model
    kernel = smoothing_kernel(run_cfg.smoothing)
    out = {}
    if kind == "aptai":
        tv_pred, logits, _ = aptai_forward(features, params, model_cfg, kernel)
        frames = frame_decode(logits)
        seq, alignment = collapse_frames(frames)
        out.update(tv_pred=tv_pred, seq=seq, alignment=alignment,
                   logits=logits)
    elif kind == "faptai-stage1":
        logits, _ = faptai_stage1_forward(features, params, model_cfg)
        seq = ctc_beam_decode(logits, beam_width=run_cfg.metrics.beam_width)
        out.update(seq=seq, logits=logits)
    elif kind == "faptai-stage2":
        stage1, stage2 = split_stage1(params)
        if not stage1:
            raise ParameterError("stage-2 checkpoint lacks stage-1 tensors")
        logits, cache = faptai_stage1_forward(features, stage1, model_cfg)
        seq = ctc_beam_decode(logits, beam_width=run_cfg.metrics.beam_width)
        t_frames = features.shape[0]
        if not seq:
            # degenerate decode: align everything to one silence-like row
            seq = [0]
        seq = seq[:run_cfg.train.n_max]
        pe = sinusoidal_pe(run_cfg.train.n_max, model_cfg.attn_dim)
        attn_eff, tv_pred, s2_cache = faptai_stage2_forward(
            cache["hidden"], seq, stage2, model_cfg, run_cfg.train.n_max,
            kernel, pe=pe,
        )
        log_attn = s2_cache["attn"]["log_attn_tn"].T[:len(seq)]
        if run_cfg.metrics.align_mode == "argmax":
            frames = np.argmax(log_attn, axis=0)
            segments = []
            for t, n in enumerate(frames):
                lab = seq[int(n)]
                if segments and segments[-1][0] == lab:
                    segments[-1] = (lab, segments[-1][1], t + 1)
                else:
                    segments.append((lab, t, t + 1))
            alignment = Alignment(segments=segments, total_frames=t_frames)
        else:
            alignment = viterbi_monotonic(log_attn, labels=seq)
        out.update(tv_pred=tv_pred, seq=seq, alignment=alignment,
                   attn=attn_eff)
    else:
        raise ParameterError(f"unknown model kind '{kind}'")
    return out


def evaluate_utterance(kind, params, utt, run_cfg, inventory, oracle=False):
    """Metric row for one utterance; None-valued metrics are undefined."""
    row = {"utt_id": utt.utt_id, "speaker": utt.speaker}
    keep = None
    if run_cfg.metrics.trim_silence:
        keep = utt.alignment.expand() != inventory.silence_id
    if oracle:
        pred_tv = utt.tv.values
        seq, alignment = list(utt.seq), utt.alignment
    else:
        p = predict(kind, params, utt.features, run_cfg)
        seq = p["seq"]
        alignment = p.get("alignment")
        pred_tv = p.get("tv_pred")

    row["per"] = per(utt.seq, seq)
    if alignment is not None:
        row["overlap"] = frame_overlap(utt.alignment, alignment, keep_mask=keep)
    if pred_tv is not None:
        truth = utt.tv.values
        hyp = pred_tv
        if keep is not None:
            truth, hyp = truth[keep], hyp[keep]
        for i, ch in enumerate(TV_CHANNELS):
            row[f"pcc_{ch}"] = pcc(hyp[:, i], truth[:, i])
        norm_rmse, mm_rmse = rmse(hyp, truth, stats=utt.stats)
        for i, ch in enumerate(TV_CHANNELS):
            row[f"rmse_{ch}"] = float(norm_rmse[i])
            row[f"rmse_mm_{ch}"] = float(mm_rmse[i])
    return row


def summarize_rows(rows, pooled_inputs=None):
    """Fold summary from per-utterance rows.

    PCC aggregates channel-wise over utterances first, then over channels;
    undefined entries are excluded. pooled_inputs optionally supplies
    (pred, truth) frame-pooled arrays for the alternative PCC granularity.
    """
    summary = {}
    pers = [r["per"] for r in rows if r.get("per") is not None]
    if pers:
        summary["per"] = float(np.mean(pers))
    overlaps = [r["overlap"] for r in rows if r.get("overlap") is not None]
    if overlaps:
        summary["overlap"] = float(np.mean(overlaps))
    if any(f"pcc_{TV_CHANNELS[0]}" in r for r in rows):
        mat = np.array(
            [[np.nan if r.get(f"pcc_{ch}") is None else r[f"pcc_{ch}"]
              for ch in TV_CHANNELS] for r in rows], dtype=float,
        )
        mean, channel_means = mean_pcc(mat)
        if mean is not None:
            summary["pcc_mean"] = mean
        for i, ch in enumerate(TV_CHANNELS):
            if np.isfinite(channel_means[i]):
                summary[f"pcc_{ch}"] = float(channel_means[i])
        for stem in ("rmse", "rmse_mm"):
            per_ch = np.array(
                [[r[f"{stem}_{ch}"] for ch in TV_CHANNELS] for r in rows],
                dtype=float,
            ).mean(axis=0)
            summary[f"{stem}_mean"] = float(per_ch.mean())
            for i, ch in enumerate(TV_CHANNELS):
                summary[f"{stem}_{ch}"] = float(per_ch[i])
    if pooled_inputs is not None:
        hyp, truth = pooled_inputs
        vals = [pcc(hyp[:, i], truth[:, i]) for i in range(truth.shape[1])]
        vals = [v for v in vals if v is not None]
        if vals:
            summary["pcc_pooled"] = float(np.mean(vals))
    return summary


def evaluate_split(kind, params, utts, run_cfg, inventory, oracle=False):
    """Evaluate a list of utterances; returns (rows, fold summary)."""
    rows = [
        evaluate_utterance(kind, params, u, run_cfg, inventory, oracle=oracle)
        for u in utts
    ]
    pooled = None
    if run_cfg.metrics.pcc_pooled and kind != "faptai-stage1":
        hyps, truths = [], []
        for u in utts:
            pred_tv = (u.tv.values if oracle
                       else predict(kind, params, u.features, run_cfg)["tv_pred"])
            hyps.append(pred_tv)
            truths.append(u.tv.values)
        pooled = (np.concatenate(hyps, axis=0), np.concatenate(truths, axis=0))
    return rows, summarize_rows(rows, pooled_inputs=pooled)
