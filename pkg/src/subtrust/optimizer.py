"""Two-stage subspace trust-region iteration and its strategy variants.

Each iteration builds a tiny search subspace out of the current minibatch
gradient and the previous step, split per layer so every layer gets its own
pair of coefficients.  The reduced quadratic model over that subspace is
assembled from exact Hessian-vector products (one sub-minibatch per layer),
then minimized inside a trust region whose size is driven purely by
backtracking and linesearch on the real minibatch loss:

  * shrink by 0.5 until the trial point strictly decreases the loss,
  * then refine by 0.7 while that keeps improving,
  * the gradient stage instead grows its step by 1.3 while improving.

The default strategy takes a positive-curvature subspace step followed by a
fresh gradient-descent step; the alternatives (classic trust region,
positive-only, saddle-free, positive-negative and negative-positive) reuse
the same machinery and exist for side-by-side comparisons.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ContractError, DegenerateError
from .hvp import HvpWorkspace
from .netcore import BlockVector, backward, forward, loss_only
from .trsolver import (
    QuadModel,
    newton_point_scale,
    solve_restricted,
    solve_saddle_free,
)

STRATEGIES = (
    "two_stage",
    "trust_region",
    "only_positive",
    "saddle_free",
    "positive_negative",
    "negative_positive",
)

DROP_REL_TOL = 1e-10   # residual below this fraction of the original norm is dropped
TINY_NORM = 1e-300
MAX_HALVINGS = 50


class SubspaceBasis:
    """Orthonormal block-sparse columns, up to two per layer.

    Column j lives entirely inside layer ``index[j][0]``; cross-layer columns
    are orthogonal for free, so orthonormalization is done per layer.
    """

    def __init__(self, layer_columns, shapes):
        self.layer_columns = layer_columns  # list (per layer) of unit-norm blocks
        self.shapes = list(shapes)
        self.index = [
            (layer, slot)
            for layer, cols in enumerate(layer_columns)
            for slot in range(len(cols))
        ]

    @property
    def dim(self):
        return len(self.index)

    @property
    def layer_column_count(self):
        return [len(cols) for cols in self.layer_columns]

    def column(self, j):
        layer, slot = self.index[j]
        return layer, self.layer_columns[layer][slot]

    def apply(self, coeffs):
        """V @ coeffs as a weight-shaped vector."""
        blocks = [np.zeros(s) for s in self.shapes]
        for j, (layer, slot) in enumerate(self.index):
            blocks[layer] += coeffs[j] * self.layer_columns[layer][slot]
        return BlockVector(blocks)

    def apply_into(self, params, coeffs, sign=-1.0):
        """params + sign * (V @ coeffs), skipping layers without columns."""
        blocks = [b.copy() for b in params]
        for j, (layer, slot) in enumerate(self.index):
            blocks[layer] += (sign * coeffs[j]) * self.layer_columns[layer][slot]
        return BlockVector(blocks)

    def project(self, vec):
        """V^T vec: inner product of every column with the matching block."""
        out = np.empty(self.dim)
        for j, (layer, slot) in enumerate(self.index):
            out[j] = float(np.vdot(self.layer_columns[layer][slot], vec[layer]))
        return out

    def gram(self):
        """V^T V over retained columns (block sparsity makes it block diagonal)."""
        g = np.zeros((self.dim, self.dim))
        for i in range(self.dim):
            li, ci = self.column(i)
            for j in range(i, self.dim):
                lj, cj = self.column(j)
                if li == lj:
                    g[i, j] = g[j, i] = float(np.vdot(ci, cj))
        return g


@dataclass
class TwoStageState:
    """Carry-over between iterations of any strategy."""

    params: BlockVector
    prev_params: BlockVector
    delta1: float
    iteration: int
    rng: np.random.Generator | None = None


@dataclass
class StepReport:
    """Telemetry for one optimizer iteration."""

    loss_before: float = np.nan
    loss_after_stage1: float = np.nan
    loss_after_stage2: float = np.nan
    stage1_executed: bool = False
    stage1_backtracks: int = 0
    stage1_radius: float = 0.0
    stage2_step: float = 0.0
    eig_min: float = np.nan
    eig_max: float = np.nan
    probe_evals: int = 0
    work_units: float = 0.0
    basis_orth_error: float = 0.0


def build_basis(grad, prev_step):
    """Per-layer orthonormalization of {gradient block, previous-step block}.

    A candidate is dropped when its norm underflows or when its residual
    after projecting out the first column is negligible (collinear blocks).
    """
    if not grad.same_shape(prev_step):
        raise ContractError("gradient and previous step have different shapes")
    layer_columns = []
    total = 0
    for g, p in zip(grad, prev_step):
        cols = []
        ng = float(np.linalg.norm(g))
        if ng > TINY_NORM:
            cols.append(g / ng)
        npv = float(np.linalg.norm(p))
        if npv > TINY_NORM:
            resid = p.copy()
            for c in cols:
                resid -= float(np.vdot(c, resid)) * c
            if float(np.linalg.norm(resid)) > DROP_REL_TOL * npv:
                for c in cols:  # second pass keeps orthogonality at roundoff level
                    resid -= float(np.vdot(c, resid)) * c
                cols.append(resid / float(np.linalg.norm(resid)))
        layer_columns.append(cols)
        total += len(cols)
    if total == 0:
        raise DegenerateError("gradient and previous step vanish in every layer")
    return SubspaceBasis(layer_columns, [g.shape for g in grad])


def assemble_model(params, basis, grad, subbatches, cfg):
    """Reduced model: B from per-layer sub-minibatch curvature products,
    r from full-minibatch gradient projections."""
    n_layers = len(params)
    if len(subbatches) != n_layers:
        raise ContractError(f"expected {n_layers} sub-minibatches, got {len(subbatches)}")
    m = basis.dim
    hcols = []
    workspaces = {}
    for j in range(m):
        layer, block = basis.column(j)
        if layer not in workspaces:
            workspaces[layer] = HvpWorkspace(params, subbatches[layer], cfg)
        hcols.append(workspaces[layer].product(layer, block))
    B = np.empty((m, m))
    for i in range(m):
        layer_i, block_i = basis.column(i)
        for j in range(m):
            B[i, j] = float(np.vdot(block_i, hcols[j][layer_i]))
    return QuadModel(B, basis.project(grad))


def _tr_stage(params, basis, solve, radius0, evaluator, f_current, max_halvings):
    """Shared backtracking engine for every trust-region-style stage.

    Returns (params', committed, radius, backtracks, f_after, n_evals).
    `solve` maps a radius to a TRSolution; trial points are only adopted on a
    strict decrease of the minibatch loss.
    """
    radius = float(radius0)
    sol = solve(radius)
    trial = basis.apply_into(params, sol.alpha)
    f_trial = evaluator(trial)
    evals = 1
    backtracks = 0
    if not f_trial < f_current:
        committed = False
        while backtracks < max_halvings:
            radius *= 0.5
            backtracks += 1
            sol = solve(radius)
            trial = basis.apply_into(params, sol.alpha)
            f_trial = evaluator(trial)
            evals += 1
            if f_trial < f_current:
                committed = True
                break
        if not committed:
            return params, False, radius, backtracks, f_current, evals
    # refine: shrink by 0.7 while that strictly improves on the current radius
    for _ in range(max_halvings):
        smaller = 0.7 * radius
        sol2 = solve(smaller)
        trial2 = basis.apply_into(params, sol2.alpha)
        f2 = evaluator(trial2)
        evals += 1
        if f2 < f_trial:
            radius, trial, f_trial = smaller, trial2, f2
        else:
            break
    return trial, True, radius, backtracks, f_trial, evals


def stage_positive(params, basis, model, evaluator, max_halvings=MAX_HALVINGS,
                   f_current=None):
    """Positive-curvature subspace step with backtracking.

    The first trial is the unconstrained minimizer inside the positive
    eigensubspace (its norm seeds the trust-region radius), so backtracking
    only ever shrinks from there.
    """
    eig = model.eig
    frag = {"executed": False, "backtracks": 0, "radius": 0.0, "evals": 0}
    active = np.flatnonzero(eig.values > eig.positive_cutoff())
    if active.size == 0:
        return params, f_current, frag
    radius0 = newton_point_scale(eig, active)
    if radius0 == 0.0:
        return params, f_current, frag
    if f_current is None:
        f_current = evaluator(params)
        frag["evals"] += 1
    solve = lambda eps: solve_restricted(eig, active, eps)
    new_params, committed, radius, backtracks, f_after, evals = _tr_stage(
        params, basis, solve, radius0, evaluator, f_current, max_halvings
    )
    frag["evals"] += evals
    frag["backtracks"] = backtracks
    if committed:
        frag["executed"] = True
        frag["radius"] = radius
        return new_params, f_after, frag
    return params, f_current, frag


def stage_gradient(params, grad, delta1, evaluator, max_halvings=MAX_HALVINGS,
                   f_current=None):
    """Normalized gradient-descent step with adaptive length.

    The previous committed length seeds the probe; failure halves it (and on
    a total failure the halved length persists so the next iteration probes
    smaller), success either refines by 0.7 after backtracking or grows by
    1.3 while each longer step keeps strictly improving.
    """
    gnorm = grad.norm()
    frag = {"executed": False, "step": 0.0, "evals": 0}
    if gnorm == 0.0 or delta1 <= 0.0:
        return params, delta1, f_current, frag
    unit = grad * (1.0 / gnorm)
    if f_current is None:
        f_current = evaluator(params)
        frag["evals"] += 1

    def probe(step):
        frag["evals"] += 1
        return evaluator(params - step * unit)

    step = float(delta1)
    f_trial = probe(step)
    if not f_trial < f_current:
        committed = False
        halvings = 0
        while halvings < max_halvings:
            step *= 0.5
            halvings += 1
            f_trial = probe(step)
            if f_trial < f_current:
                committed = True
                break
        if not committed:
            # keep a single persistent halving so the next probe starts smaller
            return params, 0.5 * delta1, f_current, frag
        for _ in range(max_halvings):
            smaller = 0.7 * step
            f2 = probe(smaller)
            if f2 < f_trial:
                step, f_trial = smaller, f2
            else:
                break
    else:
        for _ in range(max_halvings):
            larger = 1.3 * step
            f2 = probe(larger)
            if f2 < f_trial:
                step, f_trial = larger, f2
            else:
                break
    frag["executed"] = True
    frag["step"] = step
    return params - step * unit, step, f_trial, frag


def bootstrap(params0, minibatch, eps0, cfg):
    """First plain gradient step; seeds the persistent gradient step length."""
    if eps0 <= 0:
        raise ConfigError("eps0 must be positive")
    _, trace = forward(params0, minibatch, cfg)
    g0 = backward(params0, trace, minibatch, cfg)
    gnorm = g0.norm()
    if gnorm == 0.0:
        raise DegenerateError("zero gradient at the initial point")
    return TwoStageState(
        params=params0 - eps0 * g0,
        prev_params=params0,
        delta1=eps0 * gnorm,
        iteration=1,
    )


def _stage_negative(params, basis, eig, delta1, evaluator, max_halvings, f_current):
    """Trust-region step restricted to the negative-curvature eigensubspace.

    The quadratic has no interior minimizer there, so the radius seed falls
    back to the persistent gradient step length when the reduced gradient
    gives no scale of its own.
    """
    frag = {"executed": False, "backtracks": 0, "radius": 0.0, "evals": 0}
    active = np.flatnonzero(eig.values < -eig.positive_cutoff())
    if active.size == 0:
        return params, f_current, frag
    radius0 = newton_point_scale(eig, active)
    if radius0 == 0.0:
        radius0 = delta1
    if radius0 <= 0.0:
        return params, f_current, frag
    solve = lambda eps: solve_restricted(eig, active, eps)
    new_params, committed, radius, backtracks, f_after, evals = _tr_stage(
        params, basis, solve, radius0, evaluator, f_current, max_halvings
    )
    frag["evals"] += evals
    frag["backtracks"] = backtracks
    if committed:
        frag["executed"] = True
        frag["radius"] = radius
        return new_params, f_after, frag
    return params, f_current, frag


def two_stage_iterate(state, minibatch, subbatches, cfg, max_halvings=MAX_HALVINGS):
    """One full iteration: subspace step in positive curvature, then a fresh
    gradient step.  The minibatch loss never increases."""
    return variant_iterate("two_stage", state, minibatch, subbatches, cfg,
                           max_halvings=max_halvings)


def variant_iterate(strategy, state, minibatch, subbatches, cfg,
                    max_halvings=MAX_HALVINGS):
    """Dispatch one iteration of the chosen curvature-handling strategy."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; pick one of {STRATEGIES}")
    if state.iteration < 1:
        raise ContractError("state must come from bootstrap()")

    params0 = state.params
    report = StepReport()
    f0, trace = forward(params0, minibatch, cfg)
    grad = backward(params0, trace, minibatch, cfg)
    work = 3.0 * minibatch.n
    report.loss_before = f0
    report.loss_after_stage1 = f0
    evaluator = lambda p: loss_only(p, minibatch, cfg)

    basis = None
    model = None
    try:
        basis = build_basis(grad, params0 - state.prev_params)
    except DegenerateError:
        basis = None
    if basis is not None:
        model = assemble_model(params0, basis, grad, subbatches, cfg)
        work += 4.0 * sum(subbatches[layer].n for layer, _ in basis.index)
        eig = model.eig
        report.eig_min = float(eig.values[0])
        report.eig_max = float(eig.values[-1])
        report.basis_orth_error = float(np.abs(basis.gram() - np.eye(basis.dim)).max())

    params = params0
    f_cur = f0
    delta1 = state.delta1
    probe_evals = 0

    def run_positive():
        nonlocal params, f_cur, probe_evals
        new_params, f_after, frag = stage_positive(
            params, basis, model, evaluator, max_halvings, f_current=f_cur
        )
        probe_evals += frag["evals"]
        report.stage1_backtracks = frag["backtracks"]
        if frag["executed"]:
            report.stage1_executed = True
            report.stage1_radius = frag["radius"]
            params, f_cur = new_params, f_after
            report.loss_after_stage1 = f_cur
        return frag["executed"]

    def refresh_gradient():
        nonlocal grad, work
        _, tr = forward(params, minibatch, cfg)
        grad = backward(params, tr, minibatch, cfg)
        work += 3.0 * minibatch.n

    def reproject_r():
        # the gradient moved: rebuild r (and its eigen projection), keep B
        nonlocal model
        model = QuadModel(model.B, basis.project(grad))
        return model.eig

    def run_gradient_stage():
        nonlocal params, f_cur, delta1, probe_evals
        new_params, new_delta1, f_after, frag = stage_gradient(
            params, grad, delta1, evaluator, max_halvings, f_current=f_cur
        )
        probe_evals += frag["evals"]
        delta1 = new_delta1
        if frag["executed"]:
            report.stage2_step = frag["step"]
            params, f_cur = new_params, f_after

    def run_negative(eig):
        nonlocal params, f_cur, probe_evals
        new_params, f_after, frag = _stage_negative(
            params, basis, eig, delta1, evaluator, max_halvings, f_cur
        )
        probe_evals += frag["evals"]
        if frag["executed"]:
            report.stage2_step = frag["radius"]
            params, f_cur = new_params, f_after
        return frag["executed"]

    if strategy == "two_stage":
        if model is not None and run_positive():
            refresh_gradient()
        run_gradient_stage()

    elif strategy == "only_positive":
        if model is not None:
            run_positive()

    elif strategy in ("trust_region", "saddle_free"):
        if model is not None:
            eig = model.eig
            nonzero = np.flatnonzero(np.abs(eig.values) > eig.positive_cutoff())
            if nonzero.size:
                radius0 = newton_point_scale(eig, nonzero)
                if radius0 == 0.0:
                    radius0 = delta1
                if radius0 > 0.0:
                    if strategy == "trust_region":
                        solve = lambda eps: solve_restricted(eig, np.arange(eig.dim), eps)
                    else:
                        solve = lambda eps: solve_saddle_free(eig, eps)
                    new_params, committed, radius, backtracks, f_after, evals = _tr_stage(
                        params, basis, solve, radius0, evaluator, f_cur, max_halvings
                    )
                    probe_evals += evals
                    report.stage1_backtracks = backtracks
                    if committed:
                        report.stage1_executed = True
                        report.stage1_radius = radius
                        params, f_cur = new_params, f_after
                        report.loss_after_stage1 = f_cur

    elif strategy == "positive_negative":
        if model is not None:
            if run_positive():
                refresh_gradient()
                run_negative(reproject_r())
            else:
                run_negative(model.eig)

    elif strategy == "negative_positive":
        if model is not None:
            if run_negative(model.eig):
                refresh_gradient()
                reproject_r()
            run_positive()

    report.loss_after_stage2 = f_cur
    report.probe_evals = probe_evals
    report.work_units = work + probe_evals * minibatch.n
    new_state = TwoStageState(
        params=params,
        prev_params=params0,
        delta1=delta1,
        iteration=state.iteration + 1,
        rng=state.rng,
    )
    return new_state, report
