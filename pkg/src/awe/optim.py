"""ADADELTA (Zeiler 2012, Algorithm 1) over network parameter blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AdadeltaConfig:
    rho: float = 0.9
    epsilon: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


class AdadeltaState:
    """Running averages E[g^2] and E[dx^2], shaped like the parameter blocks."""

    def __init__(self, params):
        self.sq_grad = [{k: np.zeros_like(v) for k, v in block.items()} for block in params]
        self.sq_delta = [{k: np.zeros_like(v) for k, v in block.items()} for block in params]

    def copy(self) -> "AdadeltaState":
        new = AdadeltaState([])
        new.sq_grad = [{k: v.copy() for k, v in b.items()} for b in self.sq_grad]
        new.sq_delta = [{k: v.copy() for k, v in b.items()} for b in self.sq_delta]
        return new


def adadelta_update(x, g, sq_grad, sq_delta, rho, eps):
    """In-place update of one array; returns the applied step."""
    sq_grad *= rho
    sq_grad += (1.0 - rho) * g * g
    delta = -(np.sqrt(sq_delta + eps) / np.sqrt(sq_grad + eps)) * g
    sq_delta *= rho
    sq_delta += (1.0 - rho) * delta * delta
    x += delta
    return delta


def adadelta_step(params, grads, state: AdadeltaState, config: AdadeltaConfig = AdadeltaConfig()):
    """Apply one ADADELTA step to ``params`` (list of dicts of arrays) in place.

    Gradients are checked for finiteness before anything is touched, so a bad
    gradient leaves parameters and accumulators unchanged.
    """
    if len(params) != len(grads) or len(params) != len(state.sq_grad):
        raise ValueError("params, grads and state have different layer counts")
    for i, (block, gblock) in enumerate(zip(params, grads)):
        if block.keys() != gblock.keys():
            raise ValueError(f"layer {i}: gradient blocks {sorted(gblock)} do not match {sorted(block)}")
        for name, g in gblock.items():
            if g.shape != block[name].shape:
                raise ValueError(f"layer {i} {name}: gradient shape {g.shape} != {block[name].shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in layer {i} parameter {name}; update aborted")
    for block, gblock, sg, sd in zip(params, grads, state.sq_grad, state.sq_delta):
        for name, g in gblock.items():
            adadelta_update(block[name], g, sg[name], sd[name], config.rho, config.epsilon)
    return params, state
