"""Shared helpers: small random problem instances and finite-difference oracles."""

import numpy as np
import pytest

from subtrust.netcore import Batch, BlockVector, backward, forward, loss_only


def dense_net(rng, sizes, scale=0.6):
    """Small dense random net; scale keeps tanh units away from saturation."""
    blocks = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = rng.normal(0.0, scale / np.sqrt(fan_in), size=(fan_out, fan_in + 1))
        blocks.append(w)
    return BlockVector(blocks)


def random_batch(rng, n, dim, n_classes):
    return Batch(rng.normal(size=(n, dim)), rng.integers(0, n_classes, size=n))


def random_direction(rng, params):
    return BlockVector([rng.normal(size=b.shape) for b in params])


def fd_gradient(params, batch, cfg, step=1e-5):
    """Central finite differences of the loss, coordinate by coordinate."""
    grads = []
    for layer, block in enumerate(params):
        g = np.zeros_like(block)
        for idx in np.ndindex(block.shape):
            bumped = params.copy()
            bumped[layer][idx] += step
            f_plus = loss_only(bumped, batch, cfg)
            bumped[layer][idx] -= 2 * step
            f_minus = loss_only(bumped, batch, cfg)
            g[idx] = (f_plus - f_minus) / (2 * step)
        grads.append(g)
    return BlockVector(grads)


def fd_hessian_vec(params, batch, cfg, v, step=1e-5):
    """Central finite differences of the gradient along direction v."""

    def grad_at(p):
        _, trace = forward(p, batch, cfg)
        return backward(p, trace, batch, cfg)

    return (grad_at(params + step * v) - grad_at(params - step * v)) * (1.0 / (2 * step))


def fd_dense_hessian(params, batch, cfg, step=1e-5):
    """Full Hessian matrix by finite differences of the gradient."""
    n = params.n_params
    H = np.empty((n, n))
    col = 0
    for layer, block in enumerate(params):
        for idx in np.ndindex(block.shape):
            e = params.zeros_like()
            e[layer][idx] = 1.0
            H[:, col] = fd_hessian_vec(params, batch, cfg, e, step=step).flat()
            col += 1
    return 0.5 * (H + H.T)


def rel_block_err(got, want):
    denom = max(want.norm(), 1e-9)
    return (got - want).norm() / denom


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
