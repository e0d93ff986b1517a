"""Adam with bias correction, warmup + cosine schedule, gradient clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def lr_at_step(step, base_lr, warmup_steps, total_steps):
    """Linear warmup to ``base_lr`` over ``warmup_steps``, then cosine decay to 0 at ``total_steps``."""
    if warmup_steps >= total_steps:
        raise ValueError('warmup_steps must be smaller than total_steps')
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def global_norm(grads: Dict[str, np.ndarray]):
    return math.sqrt(sum(float(np.sum(g * g)) for _, g in sorted(grads.items())))


def clip_gradients(grads, max_norm):
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState, lr,
              beta1=0.9, beta2=0.999, eps=1e-8, frozen: Iterable[str] = ()):
    """One Adam update. Returns new (params, state); inputs are left untouched.

    Frozen tensors, and tensors without a gradient, keep their values and moments.
    """
    frozen = set(frozen)
    step = state.step + 1
    new_params = dict(params)
    m, v = dict(state.m), dict(state.v)
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    for name in sorted(params):
        if name in frozen or name not in grads:
            continue
        grad = grads[name]
        m[name] = beta1 * m.get(name, np.zeros_like(grad)) + (1.0 - beta1) * grad
        v[name] = beta2 * v.get(name, np.zeros_like(grad)) + (1.0 - beta2) * grad * grad
        m_hat = m[name] / correction1
        v_hat = v[name] / correction2
        new_params[name] = np.asarray(params[name] - lr * m_hat / (np.sqrt(v_hat) + eps))
    return new_params, AdamState(step, m, v)
