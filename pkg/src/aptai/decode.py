"""Decoders: model outputs to phoneme sequences and frame alignments.

Tie-breaking everywhere is lowest-index-wins so decoding is deterministic.
"""

import numpy as np
from dataclasses import dataclass

from .errors import EmptyUtteranceError, FeasibilityError, ShapeError
from .losses import log_softmax


@dataclass
class Alignment:
    """Ordered (label, start_frame, end_frame) segments tiling [0, total_frames).

    end_frame is exclusive. Consecutive segments carry different labels and
    every segment is nonempty.
    """

    segments: list
    total_frames: int

    def __post_init__(self):
        self.segments = [(int(l), int(s), int(e)) for l, s, e in self.segments]
        pos = 0
        prev_label = None
        for label, start, end in self.segments:
            if start != pos or end <= start:
                raise ShapeError("segments must tile [0, T) without gaps")
            if label == prev_label:
                raise ShapeError("consecutive segments must differ in label")
            prev_label = label
            pos = end
        if pos != self.total_frames:
            raise ShapeError(
                f"segments cover {pos} frames, expected {self.total_frames}"
            )

    def expand(self):
        """Per-frame label vector."""
        out = np.empty(self.total_frames, dtype=int)
        for label, start, end in self.segments:
            out[start:end] = label
        return out

    @property
    def labels(self):
        return [seg[0] for seg in self.segments]


def _merge_runs(segments):
    """Merge adjacent segments that carry the same label."""
    merged = []
    for label, start, end in segments:
        if merged and merged[-1][0] == label:
            merged[-1] = (label, merged[-1][1], end)
        else:
            merged.append((label, start, end))
    return merged


def frame_decode(logits):
    """Per-frame argmax label (softmax is monotone, so argmax of logits)."""
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 2:
        raise ShapeError("logits must be (T, C)")
    return np.argmax(logits, axis=1)


def collapse_frames(frames):
    """Group maximal runs of identical frame labels.

    Returns (sequence of run labels, Alignment of the runs).
    """
    frames = np.asarray(frames, dtype=int)
    if frames.size == 0:
        raise EmptyUtteranceError("no frames to collapse")
    boundaries = np.flatnonzero(np.diff(frames)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(frames)]))
    segments = [(int(frames[s]), int(s), int(e)) for s, e in zip(starts, ends)]
    seq = [seg[0] for seg in segments]
    return seq, Alignment(segments=segments, total_frames=len(frames))


def ctc_greedy_decode(logits, blank=None):
    """Per-frame argmax, collapse repeats, then delete blanks."""
    logits = np.asarray(logits, dtype=float)
    if blank is None:
        blank = logits.shape[1] - 1
    frames = frame_decode(logits)
    seq = []
    prev = None
    for c in frames:
        if c != prev and c != blank:
            seq.append(int(c))
        prev = c
    return seq


def ctc_beam_decode(logits, beam_width=16, blank=None):
    """Prefix beam search over collapsed sequences.

    Identical prefixes are merged with separate log-scores for blank and
    non-blank endings; the returned sequence is the highest marginal
    probability prefix found. Exact ties prefer the lexicographically
    smaller prefix.
    """
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 2:
        raise ShapeError("logits must be (T, C)")
    if beam_width < 1:
        raise ShapeError("beam_width must be >= 1")
    n_cls = logits.shape[1]
    if blank is None:
        blank = n_cls - 1
    logp = log_softmax(logits, axis=1)
    neg = -np.inf

    # prefix -> [log P(prefix, ends in blank), log P(prefix, ends non-blank)]
    beams = {(): [0.0, neg]}
    for row in logp:
        nxt = {}

        def bump(prefix, slot, value):
            entry = nxt.setdefault(prefix, [neg, neg])
            entry[slot] = np.logaddexp(entry[slot], value)

        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            bump(prefix, 0, total + row[blank])
            if prefix:
                bump(prefix, 1, pnb + row[prefix[-1]])
            for c in range(n_cls):
                if c == blank:
                    continue
                extended = prefix + (c,)
                if prefix and c == prefix[-1]:
                    # repeated label must cross a blank ending
                    bump(extended, 1, pb + row[c])
                else:
                    bump(extended, 1, total + row[c])

        ranked = sorted(
            nxt.items(), key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), kv[0])
        )
        beams = dict(ranked[:beam_width])

    best = min(beams.items(), key=lambda kv: (-np.logaddexp(kv[1][0], kv[1][1]), kv[0]))
    return list(best[0])


def viterbi_monotonic(log_attn, labels=None):
    """Best monotone no-skip path through an N x T attention matrix.

    Same path convention as the forward-sum loss: start at phoneme 0, end
    at phoneme N-1, each phoneme covers at least one frame. Ties prefer
    staying on the current phoneme. If labels are given they replace the
    row indices in the returned Alignment, with adjacent duplicates merged.
    """
    la = np.asarray(log_attn, dtype=float)
    if la.ndim != 2:
        raise ShapeError("log_attn must be (N, T)")
    n_ph, t_frames = la.shape
    if n_ph > t_frames:
        raise FeasibilityError(f"{n_ph} phonemes cannot tile {t_frames} frames")

    neg = -np.inf
    delta = np.full((n_ph, t_frames), neg)
    came_from_step = np.zeros((n_ph, t_frames), dtype=bool)
    delta[0, 0] = la[0, 0]
    for t in range(1, t_frames):
        stay = delta[:, t - 1]
        step = np.concatenate(([neg], delta[:-1, t - 1]))
        take_step = step > stay  # strict: ties stay
        came_from_step[:, t] = take_step
        delta[:, t] = np.where(take_step, step, stay) + la[:, t]

    if not np.isfinite(delta[-1, -1]):
        raise FeasibilityError("no path with finite log-probability")
    path = np.empty(t_frames, dtype=int)
    n = n_ph - 1
    for t in range(t_frames - 1, -1, -1):
        path[t] = n
        if came_from_step[n, t]:
            n -= 1

    boundaries = np.flatnonzero(np.diff(path)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [t_frames]))
    segments = [(int(path[s]), int(s), int(e)) for s, e in zip(starts, ends)]
    if labels is not None:
        segments = _merge_runs([(int(labels[n]), s, e) for n, s, e in segments])
    return Alignment(segments=segments, total_frames=t_frames)
