"""Exact Hessian-vector products for block-sparse directions.

The product H(w) @ v for a direction v that is nonzero in a single layer
block is computed with one directional-derivative forward sweep (started at
that layer, earlier layers are never touched), an analytic curvature product
through the softmax output, and one backward sweep that carries the tanh
second-derivative term.  The result is the exact Hessian of the regularized
mean loss applied to the embedded direction -- no Gauss-Newton approximation,
so negative curvature survives.
"""

import numpy as np

from .exceptions import ContractError, NumericError
from .netcore import BlockVector, forward


class HvpWorkspace:
    """Per-(params, batch) cache shared by all block products on that batch.

    Holds the forward trace and the per-sample backward deltas, which do not
    depend on the direction being multiplied.
    """

    def __init__(self, params, batch, cfg, trace=None):
        self.params = params
        self.batch = batch
        self.cfg = cfg
        if trace is None:
            _, trace = forward(params, batch, cfg)
        self.trace = trace
        self._prepare_deltas()

    def _prepare_deltas(self):
        trace, batch = self.trace, self.batch
        n_layers = len(self.params)
        onehot = np.zeros_like(trace.probs)
        onehot[np.arange(batch.n), batch.targets] = 1.0
        delta_a = [None] * n_layers       # per-sample d loss / d a^l, 1/n included
        delta_z = [None] * (n_layers - 1)  # per-sample d loss / d z^l
        delta_a[-1] = (trace.probs - onehot) / batch.n
        for layer in range(n_layers - 1, 0, -1):
            dz = delta_a[layer] @ self.params[layer][:, :-1]
            delta_z[layer - 1] = dz
            z = trace.post_acts[layer - 1]
            delta_a[layer - 1] = dz * (1.0 - z * z)
        self.delta_a = delta_a
        self.delta_z = delta_z

    def product(self, layer_index, block, counter=None):
        """H @ v for v equal to `block` at `layer_index`, zero elsewhere."""
        params, batch, trace = self.params, self.batch, self.trace
        n_layers = len(params)
        l0 = layer_index
        if not 0 <= l0 < n_layers:
            raise ContractError(f"layer index {l0} out of range")
        block = np.asarray(block, dtype=np.float64)
        if block.shape != params[l0].shape:
            raise ContractError(
                f"direction shape {block.shape} does not match layer {l0} "
                f"shape {params[l0].shape}"
            )
        z = trace.post_acts
        y = trace.probs
        vw, vb = block[:, :-1], block[:, -1]

        # forward sweep of activation directions, starting at l0
        ra = [None] * n_layers
        rz = [None] * (n_layers - 1)
        act0 = batch.inputs if l0 == 0 else z[l0 - 1]
        ra[l0] = act0 @ vw.T + vb
        if counter is not None:
            counter["rforward_layers"] = counter.get("rforward_layers", 0) + 1
        for layer in range(l0, n_layers - 1):
            rz[layer] = (1.0 - z[layer] * z[layer]) * ra[layer]
            ra[layer + 1] = rz[layer] @ params[layer + 1][:, :-1].T
            if counter is not None:
                counter["rforward_layers"] += 1

        # curvature of cross-entropy(softmax): diag(y) - y y^T applied per sample
        p = (y * ra[n_layers - 1]).sum(axis=1, keepdims=True)
        rdelta = (y * ra[n_layers - 1] - p * y) / batch.n

        # backward sweep of delta directions
        out = [None] * n_layers
        for layer in range(n_layers - 1, -1, -1):
            act = batch.inputs if layer == 0 else z[layer - 1]
            g = np.empty_like(params[layer])
            g[:, :-1] = rdelta.T @ act
            g[:, -1] = rdelta.sum(axis=0)
            if layer - 1 >= l0:
                g[:, :-1] += self.delta_a[layer].T @ rz[layer - 1]
            out[layer] = g
            if layer == 0:
                break
            rdz = rdelta @ params[layer][:, :-1]
            if layer == l0:
                rdz = rdz + self.delta_a[layer] @ vw
            hp = 1.0 - z[layer - 1] * z[layer - 1]
            rdelta = hp * rdz
            if layer - 1 >= l0:
                # tanh second derivative: h'' = -2 z h'
                rdelta = rdelta + (-2.0 * z[layer - 1] * hp) * ra[layer - 1] * self.delta_z[layer - 1]

        if self.cfg.reg_coeff != 0.0:
            out[l0][:, :-1] += 2.0 * self.cfg.reg_coeff * vw
            if self.cfg.regularize_bias:
                out[l0][:, -1] += 2.0 * self.cfg.reg_coeff * vb

        result = BlockVector(out)
        for layer, blk in enumerate(result):
            if not np.all(np.isfinite(blk)):
                raise NumericError(f"non-finite curvature product at layer {layer}")
        return result


def hvp_block(params, batch, cfg, layer_index, block, counter=None):
    """One-shot H @ v for a single-layer direction (builds its own workspace)."""
    return HvpWorkspace(params, batch, cfg).product(layer_index, block, counter=counter)


def hvp_full(params, batch, cfg, v):
    """H @ v for a full weight-shaped vector, as the sum of its block products."""
    if not params.same_shape(v):
        raise ContractError("direction is not shaped like the parameters")
    ws = HvpWorkspace(params, batch, cfg)
    total = params.zeros_like()
    for layer, block in enumerate(v):
        if np.any(block != 0.0):
            total = total + ws.product(layer, block)
    return total
