"""First-order reference optimizers: Adam, RMSProp, SGD with momentum."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, NumericError
from .netcore import BlockVector

METHODS = ("adam", "rmsprop", "sgd_momentum")


@dataclass
class FirstOrderState:
    """Accumulators and hyperparameters of one first-order method."""

    method: str
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    momentum: float = 0.9
    epsilon_hat: float = 1e-8
    t: int = 0
    moment1: BlockVector = None
    moment2: BlockVector = None
    velocity: BlockVector = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; pick one of {METHODS}")
        for name in ("beta1", "beta2", "rho", "momentum"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.step_size <= 0 or self.epsilon_hat <= 0:
            raise ConfigError("step_size and epsilon_hat must be positive")


def first_order_init(method, params, **hyper):
    """Fresh state with zero accumulators shaped like the parameters."""
    return FirstOrderState(
        method=method,
        moment1=params.zeros_like(),
        moment2=params.zeros_like(),
        velocity=params.zeros_like(),
        **hyper,
    )


def first_order_step(state, params, grad):
    """One elementwise update; returns (params', state') without mutation."""
    for layer, g in enumerate(grad):
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient at layer {layer}")

    if state.method == "adam":
        t = state.t + 1
        m = BlockVector(
            [state.beta1 * m_ + (1 - state.beta1) * g for m_, g in zip(state.moment1, grad)]
        )
        v = BlockVector(
            [state.beta2 * v_ + (1 - state.beta2) * g * g for v_, g in zip(state.moment2, grad)]
        )
        c1 = 1.0 - state.beta1**t
        c2 = 1.0 - state.beta2**t
        new_blocks = [
            p - state.step_size * (m_ / c1) / (np.sqrt(v_ / c2) + state.epsilon_hat)
            for p, m_, v_ in zip(params, m, v)
        ]
        new_state = FirstOrderState(
            method=state.method, step_size=state.step_size, beta1=state.beta1,
            beta2=state.beta2, rho=state.rho, momentum=state.momentum,
            epsilon_hat=state.epsilon_hat, t=t,
            moment1=m, moment2=v, velocity=state.velocity,
        )
        return BlockVector(new_blocks), new_state

    if state.method == "rmsprop":
        v = BlockVector(
            [state.rho * v_ + (1 - state.rho) * g * g for v_, g in zip(state.moment2, grad)]
        )
        new_blocks = [
            p - state.step_size * g / (np.sqrt(v_) + state.epsilon_hat)
            for p, g, v_ in zip(params, grad, v)
        ]
        new_state = FirstOrderState(
            method=state.method, step_size=state.step_size, beta1=state.beta1,
            beta2=state.beta2, rho=state.rho, momentum=state.momentum,
            epsilon_hat=state.epsilon_hat, t=state.t + 1,
            moment1=state.moment1, moment2=v, velocity=state.velocity,
        )
        return BlockVector(new_blocks), new_state

    # sgd_momentum
    vel = BlockVector(
        [state.momentum * v_ - state.step_size * g for v_, g in zip(state.velocity, grad)]
    )
    new_blocks = [p + v_ for p, v_ in zip(params, vel)]
    new_state = FirstOrderState(
        method=state.method, step_size=state.step_size, beta1=state.beta1,
        beta2=state.beta2, rho=state.rho, momentum=state.momentum,
        epsilon_hat=state.epsilon_hat, t=state.t + 1,
        moment1=state.moment1, moment2=state.moment2, velocity=vel,
    )
    return BlockVector(new_blocks), new_state
