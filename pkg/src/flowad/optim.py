"""AdamW with decoupled weight decay and a milestone learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class ScheduleConfig:
    """Step decay: eta0 * gamma^(number of milestones at or before epoch)."""

    eta0: float
    gamma: float
    milestones: tuple[int, ...]

    def __post_init__(self):
        if self.eta0 <= 0:
            raise InputError("eta0 must be positive")
        if not 0 < self.gamma <= 1:
            raise InputError("gamma must lie in (0, 1]")
        ms = tuple(self.milestones)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise InputError("milestones must be strictly increasing")
        object.__setattr__(self, "milestones", ms)


def lr_schedule(epoch: int, cfg: ScheduleConfig) -> float:
    if epoch < 0:
        raise InputError("epoch must be non-negative")
    passed = sum(1 for m in cfg.milestones if m <= epoch)
    return cfg.eta0 * cfg.gamma**passed


@dataclass
class AdamWState:
    """Moments and hyperparameters for one parameter set.

    `lr` may be reassigned between steps (the training loop applies the
    epoch schedule); moments persist across the change.
    """

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    decay_exempt: frozenset[str] = frozenset()
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_init(
    params: dict[str, np.ndarray],
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    decay_exempt=(),
) -> AdamWState:
    state = AdamWState(
        lr=lr,
        weight_decay=weight_decay,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        decay_exempt=frozenset(decay_exempt),
    )
    for name, p in params.items():
        state.m[name] = np.zeros_like(p, dtype=np.float64)
        state.v[name] = np.zeros_like(p, dtype=np.float64)
    return state


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamWState,
):
    """One decoupled-weight-decay Adam step; params mutate in place.

    Decay multiplies the parameter by (1 - lr * wd) before the moment
    update is applied, and never touches names in state.decay_exempt.
    """
    if set(grads) != set(state.m):
        raise InputError("gradient names do not match optimizer state")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InputError(f"gradient shape mismatch for '{name}'")
        if state.weight_decay and name not in state.decay_exempt:
            p *= 1.0 - state.lr * state.weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return params, state
