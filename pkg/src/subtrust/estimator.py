"""scikit-learn style classifier wrapping the subspace trust-region trainer."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import baselines, netcore, optimizer
from .data import Dataset, SamplerConfig, split_subminibatches, stratified_minibatch
from .exceptions import ConfigError
from .netcore import LossConfig


class FeedForwardClassifier(BaseEstimator, ClassifierMixin):
    """Feed-forward tanh/softmax classifier trained by a selectable solver.

    Solvers cover the trust-region strategy family (``two_stage``,
    ``trust_region``, ``only_positive``, ``saddle_free``,
    ``positive_negative``, ``negative_positive``) and the first-order
    baselines (``adam``, ``rmsprop``, ``sgd_momentum``).

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Widths of the hidden layers.
    solver : str
        One of the strategy or baseline names above.
    epochs : int
        Passes over the training set.
    batch_size : int
        Target minibatch size; rounded down to a multiple of the class count
        so stratified sampling stays exact.
    reg_coeff : float
        Quadratic regularization weight (biases excluded).
    eps0 : float
        Bootstrap gradient step factor for the trust-region solvers.
    step_size : float
        Learning rate for the first-order baselines.
    nnz_per_unit, init_scale : sparse-initialization settings.
    random_state : int
        Seed controlling initialization and minibatch order.
    """

    def __init__(self, hidden_layer_sizes=(50,), solver="two_stage", epochs=10,
                 batch_size=100, reg_coeff=1e-4, eps0=0.01, step_size=1e-3,
                 nnz_per_unit=15, init_scale=1.0, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.solver = solver
        self.epochs = epochs
        self.batch_size = batch_size
        self.reg_coeff = reg_coeff
        self.eps0 = eps0
        self.step_size = step_size
        self.nnz_per_unit = nnz_per_unit
        self.init_scale = init_scale
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        known = optimizer.STRATEGIES + baselines.METHODS
        if self.solver not in known:
            raise ConfigError(f"unknown solver {self.solver!r}; pick one of {known}")
        self.classes_, targets = np.unique(y, return_inverse=True)
        n_classes = len(self.classes_)
        if n_classes < 2:
            raise ConfigError("need at least two classes")
        self.n_features_in_ = X.shape[1]

        dataset = Dataset.build(np.asarray(X, dtype=np.float64), targets,
                                n_classes=n_classes)
        batch_size = max(n_classes, (self.batch_size // n_classes) * n_classes)
        sizes = [self.n_features_in_, *self.hidden_layer_sizes, n_classes]
        cfg = LossConfig(reg_coeff=self.reg_coeff)

        seeds = np.random.SeedSequence(self.random_state).spawn(2)
        params = netcore.init_sparse(
            sizes, seeds[0], nnz_per_unit=self.nnz_per_unit, scale=self.init_scale
        )
        rng = np.random.default_rng(seeds[1])
        n_layers = len(params)
        sampler = SamplerConfig(minibatch_size=batch_size, sub_count=n_layers,
                                seed=self.random_state)
        batches_per_epoch = max(1, dataset.n // batch_size)

        self.loss_curve_ = []
        full_batch = netcore.Batch(dataset.inputs, dataset.labels)
        if self.solver in baselines.METHODS:
            state = baselines.first_order_init(self.solver, params,
                                               step_size=self.step_size)
            for _ in range(self.epochs):
                for _ in range(batches_per_epoch):
                    batch = stratified_minibatch(dataset, sampler, rng)
                    _, trace = netcore.forward(params, batch, cfg)
                    grad = netcore.backward(params, trace, batch, cfg)
                    params, state = baselines.first_order_step(state, params, grad)
                self.loss_curve_.append(netcore.loss_only(params, full_batch, cfg))
        else:
            batch = stratified_minibatch(dataset, sampler, rng)
            state = optimizer.bootstrap(params, batch, self.eps0, cfg)
            for _ in range(self.epochs):
                for _ in range(batches_per_epoch):
                    batch = stratified_minibatch(dataset, sampler, rng)
                    subbatches = split_subminibatches(batch, n_layers)
                    state, _ = optimizer.variant_iterate(
                        self.solver, state, batch, subbatches, cfg
                    )
                self.loss_curve_.append(
                    netcore.loss_only(state.params, full_batch, cfg)
                )
            params = state.params

        self.params_ = params
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ConfigError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return netcore.predict_proba(self.params_, X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
