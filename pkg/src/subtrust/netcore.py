"""Feed-forward net core: parameters, loss, forward/backward passes, sparse init.

Networks are fully connected with tanh hidden units and a softmax output
trained under mean cross-entropy.  Layer l is stored as a single matrix of
shape (out_dim, in_dim + 1) whose last column is the bias; the forward pass
treats the bias as an extra input fixed to 1.  All math is float64.
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, ContractError, NumericError


class BlockVector:
    """A weight-shaped quantity split into L per-layer blocks.

    Used for weights, gradients and step directions alike.  Supports the
    small amount of vector algebra the optimizer needs; all operations
    return new instances and never mutate their operands.
    """

    __slots__ = ("blocks",)

    def __init__(self, blocks):
        self.blocks = [np.asarray(b, dtype=np.float64) for b in blocks]

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    def __iter__(self):
        return iter(self.blocks)

    @property
    def sizes(self):
        """Layer widths [in_0, out_0, out_1, ...] implied by the block shapes."""
        dims = [self.blocks[0].shape[1] - 1]
        dims += [b.shape[0] for b in self.blocks]
        return dims

    @property
    def n_params(self):
        return sum(b.size for b in self.blocks)

    def copy(self):
        return BlockVector([b.copy() for b in self.blocks])

    def zeros_like(self):
        return BlockVector([np.zeros_like(b) for b in self.blocks])

    def __add__(self, other):
        return BlockVector([a + b for a, b in zip(self.blocks, other.blocks)])

    def __sub__(self, other):
        return BlockVector([a - b for a, b in zip(self.blocks, other.blocks)])

    def __mul__(self, s):
        return BlockVector([s * b for b in self.blocks])

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def dot(self, other):
        return float(sum(np.vdot(a, b) for a, b in zip(self.blocks, other.blocks)))

    def norm(self):
        return float(np.sqrt(self.dot(self)))

    def same_shape(self, other):
        return len(self) == len(other) and all(
            a.shape == b.shape for a, b in zip(self.blocks, other.blocks)
        )

    def flat(self):
        """Flatten layer-major, row-major within each block."""
        return np.concatenate([b.ravel() for b in self.blocks])


# Weights are just a BlockVector; the alias marks intent at call sites.
NetParams = BlockVector


@dataclass
class Batch:
    """A slice of training data: feature rows plus integer class targets."""

    inputs: np.ndarray
    targets: np.ndarray
    indices: np.ndarray | None = None  # positions in the source dataset, if known

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.targets.shape[0]:
            raise ConfigError("batch inputs/targets shape mismatch")
        if self.inputs.shape[0] < 1:
            raise ConfigError("batch must contain at least one sample")

    @property
    def n(self):
        return self.inputs.shape[0]


@dataclass
class LossConfig:
    """Quadratic-regularization settings for the loss."""

    reg_coeff: float = 0.0
    regularize_bias: bool = False

    def __post_init__(self):
        if self.reg_coeff < 0:
            raise ConfigError("reg_coeff must be nonnegative")


@dataclass
class ForwardTrace:
    """Intermediates kept by the forward pass for backward and curvature work."""

    pre_acts: list = field(default_factory=list)   # a^0 .. a^{L-1}, each (n, dim)
    post_acts: list = field(default_factory=list)  # z^0 .. z^{L-2}, each (n, dim)
    probs: np.ndarray = None                       # softmax rows, (n, C)
    sample_losses: np.ndarray = None               # (n,)

    @property
    def n(self):
        return self.probs.shape[0]

    @property
    def n_layers(self):
        return len(self.pre_acts)


def check_sizes(sizes):
    """Validate a layer-width chain like [784, 50, 10]."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2:
        raise ConfigError(f"need at least input and output widths, got {sizes}")
    if any(s < 1 for s in sizes):
        raise ConfigError(f"layer widths must be positive, got {sizes}")
    return sizes


def init_sparse(sizes, seed, nnz_per_unit=15, scale=1.0):
    """Sparse Gaussian initialization: each unit gets a fixed number of
    nonzero incoming weights, everything else (including biases) is zero.

    Keeping fan-in small stops tanh units from saturating at the start of
    training.  Deterministic for a fixed seed.
    """
    sizes = check_sizes(sizes)
    if nnz_per_unit < 1:
        raise ConfigError("nnz_per_unit must be positive")
    if scale <= 0:
        raise ConfigError("scale must be positive")
    rng = np.random.default_rng(seed)
    blocks = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.zeros((fan_out, fan_in + 1))
        k = min(nnz_per_unit, fan_in)
        for row in range(fan_out):
            cols = rng.choice(fan_in, size=k, replace=False)
            w[row, cols] = rng.normal(0.0, scale, size=k)
        blocks.append(w)
    return BlockVector(blocks)


def _affine(act, w):
    # act (n, in), w (out, in+1) with bias as last column
    return act @ w[:, :-1].T + w[:, -1]


def _forward(params, batch, cfg, keep_trace):
    """Single implementation behind forward() and loss_only() so both produce
    bit-identical losses."""
    n_layers = len(params)
    if batch.inputs.shape[1] + 1 != params[0].shape[1]:
        raise ConfigError(
            f"input dim {batch.inputs.shape[1]} does not match first layer "
            f"fan-in {params[0].shape[1] - 1}"
        )
    n_classes = params[-1].shape[0]
    if batch.targets.min() < 0 or batch.targets.max() >= n_classes:
        raise ConfigError("targets outside [0, n_classes)")

    trace = ForwardTrace() if keep_trace else None
    act = batch.inputs
    for layer in range(n_layers):
        a = _affine(act, params[layer])
        if not np.all(np.isfinite(a)):
            raise NumericError(f"non-finite pre-activation at layer {layer}")
        if keep_trace:
            trace.pre_acts.append(a)
        if layer < n_layers - 1:
            act = np.tanh(a)
            if keep_trace:
                trace.post_acts.append(act)

    # softmax / cross-entropy via max subtraction + log-sum-exp
    shifted = a - a.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    sample_losses = -logp[np.arange(batch.n), batch.targets]

    loss = float(sample_losses.mean())
    if cfg.reg_coeff != 0.0:
        if cfg.regularize_bias:
            sq = sum(float((b * b).sum()) for b in params)
        else:
            sq = sum(float((b[:, :-1] * b[:, :-1]).sum()) for b in params)
        loss = loss + cfg.reg_coeff * sq

    if keep_trace:
        trace.probs = np.exp(logp)
        trace.sample_losses = sample_losses
        return loss, trace
    return loss, None


def forward(params, batch, cfg):
    """Regularized mean cross-entropy loss plus the trace of intermediates."""
    return _forward(params, batch, cfg, keep_trace=True)


def loss_only(params, batch, cfg):
    """Loss value alone; bit-identical to forward() on the same inputs."""
    return _forward(params, batch, cfg, keep_trace=False)[0]


def _check_trace(params, trace, batch):
    if trace.n_layers != len(params) or trace.n != batch.n:
        raise ContractError("trace does not match params/batch")


def backward(params, trace, batch, cfg):
    """Exact gradient of the regularized mean loss, one block per layer."""
    _check_trace(params, trace, batch)
    n_layers = len(params)
    onehot = np.zeros_like(trace.probs)
    onehot[np.arange(batch.n), batch.targets] = 1.0
    delta = (trace.probs - onehot) / batch.n  # d loss / d a^{L-1}

    grads = [None] * n_layers
    for layer in range(n_layers - 1, -1, -1):
        act = batch.inputs if layer == 0 else trace.post_acts[layer - 1]
        g = np.empty_like(params[layer])
        g[:, :-1] = delta.T @ act
        g[:, -1] = delta.sum(axis=0)
        grads[layer] = g
        if layer > 0:
            z = trace.post_acts[layer - 1]
            delta = (delta @ params[layer][:, :-1]) * (1.0 - z * z)

    if cfg.reg_coeff != 0.0:
        two_reg = 2.0 * cfg.reg_coeff
        for layer in range(n_layers):
            if cfg.regularize_bias:
                grads[layer] += two_reg * params[layer]
            else:
                grads[layer][:, :-1] += two_reg * params[layer][:, :-1]
    return BlockVector(grads)


def predict_proba(params, inputs):
    """Softmax class probabilities for a feature matrix."""
    act = np.asarray(inputs, dtype=np.float64)
    n_layers = len(params)
    for layer in range(n_layers):
        a = _affine(act, params[layer])
        if layer < n_layers - 1:
            act = np.tanh(a)
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)
