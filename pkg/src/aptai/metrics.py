"""Evaluation metrics and their aggregation across held-out-speaker folds."""

import numpy as np

from .errors import ParameterError, ShapeError, UnitsError


def levenshtein(ref, hyp):
    """Edit distance with unit substitution/insertion/deletion costs."""
    n, m = len(ref), len(hyp)
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=int)
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ref[i - 1] != hyp[j - 1])
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev, cur = cur, prev
    return int(prev[m])


def per(ref, hyp):
    """Phoneme error rate: 100 * edit_distance / len(ref). May exceed 100."""
    if len(ref) == 0:
        raise ParameterError("reference sequence must be nonempty")
    return 100.0 * levenshtein(list(ref), list(hyp)) / len(ref)


def frame_overlap(ref, hyp, keep_mask=None):
    """Percentage of frames on which two alignments agree.

    keep_mask optionally restricts scoring to a frame subset (e.g. silence
    trimming); it must leave at least one frame.
    """
    if ref.total_frames != hyp.total_frames:
        raise ShapeError("alignments cover different frame counts")
    a, b = ref.expand(), hyp.expand()
    if keep_mask is not None:
        keep_mask = np.asarray(keep_mask, dtype=bool)
        if keep_mask.shape != a.shape:
            raise ShapeError("keep_mask length mismatch")
        if not keep_mask.any():
            raise ParameterError("keep_mask removes every frame")
        a, b = a[keep_mask], b[keep_mask]
    return 100.0 * float(np.mean(a == b))


def pcc(a, b):
    """Pearson correlation; None when either series is constant."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ShapeError("series lengths differ")
    if a.ndim != 1 or len(a) < 2:
        raise ShapeError("need 1-D series of length >= 2")
    da, db = a - a.mean(), b - b.mean()
    va, vb = np.sum(da ** 2), np.sum(db ** 2)
    if va <= 0 or vb <= 0:
        return None
    return float(np.sum(da * db) / np.sqrt(va * vb))


def rmse(pred, truth, stats=None):
    """Per-channel root mean square error in normalized units.

    Returns (normalized_rmse, mm_rmse_or_None). With stats supplied the
    de-normalized values (channel std times normalized error) are reported
    as millimeters/radians.
    """
    p = np.asarray(getattr(pred, "values", pred), dtype=float)
    y = np.asarray(getattr(truth, "values", truth), dtype=float)
    if p.shape != y.shape:
        raise ShapeError(f"shape mismatch: {p.shape} vs {y.shape}")
    norm_p = getattr(pred, "normalized", None)
    norm_y = getattr(truth, "normalized", None)
    if norm_p is not None and norm_y is not None and norm_p != norm_y:
        raise UnitsError("cannot mix normalized and raw trajectories")
    values = np.sqrt(np.mean((p - y) ** 2, axis=0))
    mm = values * stats.std if stats is not None else None
    return values, mm


def _mean_sd(samples):
    arr = np.asarray(samples, dtype=float)
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return mean, sd


def aggregate_loso(fold_reports):
    """Mean and sample standard deviation of each metric across folds.

    fold_reports is a list of {metric_name: value} dicts; metrics missing
    from a fold (undefined) are excluded from that metric's aggregation.
    """
    if not fold_reports:
        raise ParameterError("need at least one fold")
    keys = []
    for rep in fold_reports:
        for k in rep:
            if k not in keys:
                keys.append(k)
    out = {}
    for k in keys:
        vals = [rep[k] for rep in fold_reports if k in rep and rep[k] is not None]
        if vals:
            out[k] = _mean_sd(vals)
    return out


def mean_pcc(per_utterance_pcc):
    """Channel-then-global mean of per-utterance per-channel PCC values.

    per_utterance_pcc is (U, K) with NaN marking undefined entries; those
    are excluded. Channels undefined everywhere are dropped entirely.
    """
    arr = np.asarray(per_utterance_pcc, dtype=float)
    if arr.ndim != 2:
        raise ShapeError("expected (utterances, channels)")
    finite = np.isfinite(arr)
    counts = finite.sum(axis=0)
    sums = np.where(finite, arr, 0.0).sum(axis=0)
    channel_means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    defined = np.isfinite(channel_means)
    if not defined.any():
        return None, channel_means
    return float(channel_means[defined].mean()), channel_means


def pca(embeddings, k):
    """Top-k principal components of mean-centered rows.

    Returns (projections M x k, explained-variance ratios). Components are
    ordered by descending eigenvalue; each component's largest-magnitude
    loading is made positive so signs are deterministic.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ParameterError("need an (M, D) matrix with M >= 2")
    m, d = x.shape
    if not 1 <= k <= d:
        raise ParameterError(f"k must lie in [1, {d}]")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (m - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    total = eigvals.sum()
    ratios = eigvals[:k] / total if total > 0 else np.zeros(k)
    comps = eigvecs[:, order[:k]].T
    for i in range(k):
        peak = np.argmax(np.abs(comps[i]))
        if comps[i, peak] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T, ratios
