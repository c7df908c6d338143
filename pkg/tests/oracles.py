"""Independent reference implementations used as test oracles.

Everything here is written the dumb way on purpose: explicit path
enumeration, scalar loops, full DP matrices. Nothing imports the package's
own numeric routines, so agreement is meaningful.
"""

import itertools
from functools import lru_cache

import numpy as np


def fd_grad(func, x, step=1e-4):
    """Central finite differences of a scalar function, 64-bit."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        hi = func(x)
        xf[i] = orig - step
        lo = func(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def rel_err(a, b):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def collapse_path(path, blank):
    """Remove immediate repeats, then blanks."""
    out = []
    prev = None
    for c in path:
        if c != prev:
            out.append(c)
        prev = c
    return tuple(c for c in out if c != blank)


@lru_cache(maxsize=None)
def _path_groups(t_frames, n_cls, blank):
    """All label paths of length T over n_cls symbols, grouped by their
    collapsed sequence. Cached per shape so 100 random instances stay fast."""
    paths = np.array(
        list(itertools.product(range(n_cls), repeat=t_frames)), dtype=int
    )
    groups = {}
    for i, row in enumerate(paths):
        key = collapse_path(row.tolist(), blank)
        groups.setdefault(key, []).append(i)
    return paths, {k: np.array(v) for k, v in groups.items()}


def ctc_brute(probs, labels, blank):
    """Total probability of all paths collapsing to labels, by enumeration."""
    probs = np.asarray(probs, dtype=float)
    t_frames, n_cls = probs.shape
    paths, groups = _path_groups(t_frames, n_cls, blank)
    key = tuple(labels)
    rows = groups.get(key)
    if rows is None:
        return 0.0
    chosen = paths[rows]
    pathprobs = probs[np.arange(t_frames)[None, :], chosen]
    return float(pathprobs.prod(axis=1).sum())


def ctc_marginal_argmax(probs, blank):
    """Most probable collapsed sequence under exhaustive marginalization.

    Ties prefer the lexicographically smaller sequence.
    """
    probs = np.asarray(probs, dtype=float)
    t_frames, n_cls = probs.shape
    paths, groups = _path_groups(t_frames, n_cls, blank)
    best_key, best_p = None, -1.0
    for key in sorted(groups):
        rows = groups[key]
        chosen = paths[rows]
        p = probs[np.arange(t_frames)[None, :], chosen].prod(axis=1).sum()
        if p > best_p + 1e-15:
            best_key, best_p = key, p
    return list(best_key), best_p


def monotone_paths(n_ph, t_frames):
    """All index paths with path[0] = 0, path[-1] = N-1, steps in {0, +1}."""
    results = []

    def extend(path):
        t = len(path)
        n = path[-1]
        if t == t_frames:
            if n == n_ph - 1:
                results.append(list(path))
            return
        remaining = t_frames - t
        for nxt in (n, n + 1):
            if nxt >= n_ph:
                continue
            if (n_ph - 1) - nxt > remaining - 1:
                continue  # cannot still reach the last phoneme
            path.append(nxt)
            extend(path)
            path.pop()

    if n_ph <= t_frames:
        extend([0])
    return results


def forward_sum_brute(log_attn):
    """(-log sum of path products, best path, its log-probability)."""
    la = np.asarray(log_attn, dtype=float)
    n_ph, t_frames = la.shape
    paths = monotone_paths(n_ph, t_frames)
    assert paths, "no feasible monotone path"
    total = -np.inf
    best_lp, best_path = -np.inf, None
    for path in paths:
        lp = sum(la[n, t] for t, n in enumerate(path))
        total = np.logaddexp(total, lp)
        if lp > best_lp:
            best_lp, best_path = lp, path
    return -total, best_path, best_lp


def levenshtein_ref(a, b):
    """Full-matrix edit distance, textbook recurrence."""
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        dp[i][0] = i
    for j in range(m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            dp[i][j] = min(dp[i - 1][j] + 1, dp[i][j - 1] + 1,
                           dp[i - 1][j - 1] + cost)
    return dp[n][m]


def butterworth_gain_sq(freq, cutoff, order):
    """Squared analytic low-pass magnitude: zero-phase response."""
    return 1.0 / (1.0 + (freq / cutoff) ** (2 * order))


def sine_amplitude(series, freq, rate):
    """Amplitude of the freq component via projection onto sin/cos."""
    series = np.asarray(series, dtype=float)
    t = np.arange(len(series)) / rate
    s = np.sin(2 * np.pi * freq * t)
    c = np.cos(2 * np.pi * freq * t)
    return float(np.hypot(2 * np.mean(series * s), 2 * np.mean(series * c)))


def _point_segment(px, py, ax, ay, bx, by):
    """Scalar closest-point-on-segment; entirely independent arithmetic."""
    dx, dy = bx - ax, by - ay
    denom = dx * dx + dy * dy
    t = ((px - ax) * dx + (py - ay) * dy) / denom
    t = min(1.0, max(0.0, t))
    qx, qy = ax + t * dx, ay + t * dy
    dist = ((px - qx) ** 2 + (py - qy) ** 2) ** 0.5
    return dist, qx, qy


def tvs_reference(sensors, origin, axis_angle, palate):
    """Scalar-loop recomputation of all nine tract-variable channels."""
    import math

    ox, oy = origin
    ux, uy = math.cos(axis_angle), math.sin(axis_angle)

    def angle(px, py):
        vx, vy = px - ox, py - oy
        return math.atan2(ux * vy - uy * vx, vx * ux + vy * uy)

    n = len(sensors["UL"])
    out = np.zeros((n, 9))
    for i in range(n):
        ulx, uly = sensors["UL"][i]
        llx, lly = sensors["LL"][i]
        jx, jy = sensors["JAW"][i]
        out[i, 0] = math.hypot(ulx - llx, uly - lly)
        mx, my = (ulx + llx) / 2.0, (uly + lly) / 2.0
        out[i, 1] = (mx - ox) * ux + (my - oy) * uy
        out[i, 2] = angle(jx, jy)
        for k, name in enumerate(("TT", "TM", "TB")):
            px, py = sensors[name][i]
            best = None
            for j in range(len(palate) - 1):
                ax, ay = palate[j]
                bx, by = palate[j + 1]
                d, qx, qy = _point_segment(px, py, ax, ay, bx, by)
                if best is None or d < best[0]:
                    best = (d, qx, qy)
            out[i, 3 + 2 * k] = angle(best[1], best[2])
            out[i, 4 + 2 * k] = best[0]
    return out
