"""Adam updates and the warmup/static/decay learning-rate schedule."""

import numpy as np
from dataclasses import dataclass, field

from ..errors import TrainingError


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8):
    """Standard bias-corrected first/second-moment update, in place.

    Parameter names are visited in sorted order so update order (and hence
    floating-point results) is reproducible.
    """
    b1, b2 = betas
    state.t += 1
    t = state.t
    for name in sorted(grads):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1 ** t)
        v_hat = state.v[name] / (1.0 - b2 ** t)
        params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def lr_schedule(epoch, train_cfg):
    """Multiplier: linear 0 -> 1 over warmup epochs, 1 through the static
    span, then linear decay whose last epoch is the smallest positive step
    (1/decay); zero afterwards. Epoch 0 of a nonzero warmup is 0.0."""
    w = train_cfg.warmup_epochs
    s = train_cfg.static_epochs
    d = train_cfg.decay_epochs
    if epoch < 0:
        raise TrainingError("epoch must be nonnegative")
    if epoch < w:
        return epoch / w
    if epoch < w + s:
        return 1.0
    if d > 0 and epoch < w + s + d:
        return (w + s + d - epoch) / d
    return 0.0
