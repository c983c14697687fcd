"""Exact solver for the small trust-region subproblem.

Minimizes Q(alpha) = -r^T alpha + 0.5 alpha^T B alpha over ||alpha|| <= eps
for a symmetric B of modest dimension (at most 64 here).  The solve goes
through a full eigendecomposition (cyclic Jacobi), after which the boundary
multiplier is the root of the secular equation

    phi(lambda) = sum_i  rt_i^2 / (lambda_i + lambda)^2  =  eps^2,

found by Newton iterations that increase monotonically from a starting point
left of the root.  Variants restrict the search to the positive (or negative)
curvature eigensubspace, or replace eigenvalues by their absolute values.
The degenerate case where the bottom eigendirection carries no reduced
gradient is resolved by nudging one well-chosen component of r.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError, DegenerateError, NumericError

NEWTON_TOL = 1e-10       # relative tolerance on phi - eps^2
NEWTON_MAX_ITER = 200
EIG_REL_CUTOFF = 1e-12   # |lambda| below this (times scale) counts as zero curvature


@dataclass
class TRSolution:
    """Solution of one trust-region subproblem in basis coordinates."""

    alpha: np.ndarray
    multiplier: float
    interior: bool
    q_value: float


@dataclass
class EigenDecomp:
    """Eigendecomposition of B with the reduced gradient projected onto it."""

    values: np.ndarray    # ascending
    vectors: np.ndarray   # orthonormal columns, vectors[:, i] <-> values[i]
    rtilde: np.ndarray    # rtilde[i] = r . vectors[:, i]

    @property
    def dim(self):
        return self.values.shape[0]

    def positive_cutoff(self):
        scale = float(np.abs(self.values).max()) if self.dim else 0.0
        return EIG_REL_CUTOFF * max(1.0, scale)


class QuadModel:
    """Reduced quadratic model: curvature matrix B and gradient r.

    B is symmetrized on construction; the eigendecomposition is computed on
    first use and cached.
    """

    def __init__(self, B, r):
        B = np.asarray(B, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        if B.ndim != 2 or B.shape[0] != B.shape[1] or r.shape != (B.shape[0],):
            raise ContractError("B must be square and r must match its dimension")
        if not (np.all(np.isfinite(B)) and np.all(np.isfinite(r))):
            raise ContractError("non-finite entries in quadratic model")
        self.B = 0.5 * (B + B.T)
        self.r = r
        self._eig = None

    @property
    def dim(self):
        return self.r.shape[0]

    def value(self, alpha):
        """Q(alpha) for a coefficient vector (vectorized over rows if 2-d)."""
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.ndim == 1:
            return float(-self.r @ alpha + 0.5 * alpha @ self.B @ alpha)
        return -(alpha @ self.r) + 0.5 * np.einsum("ij,ij->i", alpha @ self.B, alpha)

    @property
    def eig(self):
        if self._eig is None:
            self._eig = decompose(self)
        return self._eig


def eigh_small(B, tol=1e-13, max_sweeps=50):
    """Eigendecomposition of a small symmetric matrix by cyclic Jacobi sweeps.

    Rotations are applied pairwise in row order until the off-diagonal
    Frobenius mass drops below tol * ||B||_F.  Returns eigenvalues in
    ascending order with matching orthonormal eigenvector columns.
    """
    B = np.asarray(B, dtype=np.float64)
    n = B.shape[0]
    if B.ndim != 2 or B.shape[1] != n:
        raise ContractError("matrix must be square")
    scale = max(1.0, float(np.abs(B).max()))
    if float(np.abs(B - B.T).max()) > 1e-9 * scale:
        raise ContractError("matrix is not symmetric")
    a = 0.5 * (B + B.T)
    v = np.eye(n)
    if n == 1:
        return a[0].copy(), v
    fro = float(np.linalg.norm(a, "fro"))
    if fro == 0.0:
        return np.zeros(n), v
    threshold = tol * fro
    upper = np.triu_indices(n, k=1)
    for _ in range(max_sweeps):
        # off-diagonal Frobenius mass, summed directly (a subtractive form
        # total - diag^2 would floor out at sqrt(eps) * ||B|| and never converge)
        off = float(np.sqrt(2.0 * (a[upper] ** 2).sum()))
        if off <= threshold:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                # Jacobi rotation annihilating a[p, q]; hypot keeps huge tau
                # (tiny apq) from overflowing -- the angle just underflows to 0
                with np.errstate(over="ignore", divide="ignore"):
                    tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                    if tau >= 0.0:
                        t = 1.0 / (tau + np.hypot(1.0, tau))
                    else:
                        t = -1.0 / (-tau + np.hypot(1.0, tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                a[p, q] = a[q, p] = 0.0
                rot_p = c * v[:, p] - s * v[:, q]
                rot_q = s * v[:, p] + c * v[:, q]
                v[:, p], v[:, q] = rot_p, rot_q
    else:
        raise NumericError("Jacobi sweeps did not converge")
    vals = np.diag(a).copy()
    order = np.argsort(vals, kind="stable")
    return vals[order], v[:, order]


def decompose(model, tol=1e-13):
    """EigenDecomp of a QuadModel, with r projected onto the eigenbasis."""
    vals, vecs = eigh_small(model.B, tol=tol)
    return EigenDecomp(values=vals, vectors=vecs, rtilde=vecs.T @ model.r)


def _phi(eig, active, lam):
    d = eig.values[active] + lam
    return float(np.sum((eig.rtilde[active] / d) ** 2))


def _phi_prime(eig, active, lam):
    d = eig.values[active] + lam
    return float(-2.0 * np.sum(eig.rtilde[active] ** 2 / d**3))


def newton_secular(eig, active, eps, lambda_lb, lambda_init=0.0, history=None):
    """Root of phi(lambda) = eps^2 restricted to the active index set.

    Requires phi(lambda_init) > eps^2 and lambda_init > lambda_lb; the
    iterates then increase monotonically toward the root (phi is convex and
    decreasing right of lambda_lb), so they never leave the valid region.
    `history`, when given a list, collects the iterates.
    """
    active = np.asarray(active)
    if active.size == 0 or not np.any(eig.rtilde[active] != 0.0):
        raise ContractError("secular equation needs a nonzero reduced gradient")
    if lambda_init <= lambda_lb:
        raise ContractError("lambda_init must exceed the lower bound")
    target = eps * eps
    lam = float(lambda_init)
    if history is not None:
        history.append(lam)
    val0 = _phi(eig, active, lam) - target
    if abs(val0) <= NEWTON_TOL * target:
        return lam  # lambda_init already sits on the root (single-term case)
    if val0 < 0.0:
        raise ContractError("phi(lambda_init) <= eps^2: use the interior solution")
    for _ in range(NEWTON_MAX_ITER):
        val = _phi(eig, active, lam) - target
        if abs(val) <= NEWTON_TOL * target:
            return lam
        step = val / _phi_prime(eig, active, lam)
        new_lam = lam - step
        if not np.isfinite(new_lam) or new_lam <= lam:
            # converged to rounding: Newton can no longer make progress
            if abs(val) <= 1e4 * NEWTON_TOL * target:
                return lam
            raise NumericError("secular Newton stalled")
        lam = new_lam
        if history is not None:
            history.append(lam)
    raise NumericError("secular Newton exceeded its iteration cap")


def _solution_from(eig, active, lam, interior):
    coeff = np.zeros(eig.dim)
    coeff[active] = eig.rtilde[active] / (eig.values[active] + lam)
    alpha = eig.vectors @ coeff
    q = float(-eig.rtilde @ coeff + 0.5 * np.sum(eig.values * coeff * coeff))
    return TRSolution(alpha=alpha, multiplier=float(lam), interior=interior, q_value=q)


def solve_restricted(eig, active, eps, perturb_eps=None):
    """Minimize Q over span of the active eigendirections inside ||alpha|| <= eps.

    Engine behind all solver fronts.  Interior Newton point when the active
    curvature is positive definite and the point fits; otherwise the boundary
    solution via the secular equation, with the reduced gradient nudged first
    when the bottom active direction carries none of it.
    """
    if eps <= 0:
        raise ContractError("trust region size must be positive")
    active = np.flatnonzero(active) if np.asarray(active).dtype == bool else np.asarray(active)
    if active.size == 0:
        raise DegenerateError("empty active eigensubspace")
    lam_bottom = float(eig.values[active].min())
    rt_active = eig.rtilde[active]

    if not np.any(rt_active != 0.0):
        if lam_bottom > 0.0:
            # flat reduced gradient on a convex subspace: nothing to gain
            return TRSolution(
                alpha=np.zeros(eig.dim), multiplier=0.0, interior=True, q_value=0.0
            )
        eig = _perturbed(eig, active, perturb_eps)
        rt_active = eig.rtilde[active]

    if lam_bottom > 0.0 and _phi(eig, active, 0.0) <= eps * eps:
        return _solution_from(eig, active, 0.0, interior=True)

    # boundary case
    bottom = active[np.argmin(eig.values[active])]
    if lam_bottom <= 0.0 and eig.rtilde[bottom] == 0.0:
        eig = _perturbed(eig, active, perturb_eps)
    if lam_bottom > 0.0:
        lam_init = 0.0
    else:
        bottom = active[np.argmin(eig.values[active])]
        lam_init = -lam_bottom + abs(eig.rtilde[bottom]) / (2.0 * eps)
    lam = newton_secular(eig, active, eps, lambda_lb=-lam_bottom, lambda_init=lam_init)
    return _solution_from(eig, active, lam, interior=False)


def _perturbed(eig, active, perturb_eps):
    """Nudge r along the coordinate where the bottom active eigenvector is
    largest, so the secular equation becomes solvable (degenerate case)."""
    bottom = active[np.argmin(eig.values[active])]
    v1 = eig.vectors[:, bottom]
    if perturb_eps is None:
        rnorm = float(np.linalg.norm(eig.vectors @ eig.rtilde))
        perturb_eps = 1e-8 * max(1.0, rnorm)
    k0 = int(np.argmax(np.abs(v1)))
    r = eig.vectors @ eig.rtilde
    r = r.copy()
    r[k0] += perturb_eps
    return EigenDecomp(values=eig.values, vectors=eig.vectors, rtilde=eig.vectors.T @ r)


def solve_full(eig, eps, perturb_eps=None):
    """Global minimizer of Q over the whole ball, all eigendirections active."""
    return solve_restricted(eig, np.arange(eig.dim), eps, perturb_eps=perturb_eps)


def solve_positive_subspace(eig, eps):
    """Minimizer of Q restricted to the positive-curvature eigensubspace."""
    active = np.flatnonzero(eig.values > eig.positive_cutoff())
    if active.size == 0:
        raise ContractError("no positive eigenvalue: positive-subspace step undefined")
    return solve_restricted(eig, active, eps)


def solve_saddle_free(eig, eps, perturb_eps=None):
    """solve_full on the decomposition with eigenvalues replaced by |values|."""
    absvals = np.abs(eig.values)
    if float(absvals.max(initial=0.0)) <= eig.positive_cutoff():
        raise DegenerateError("all eigenvalues are (numerically) zero")
    order = np.argsort(absvals, kind="stable")
    flipped = EigenDecomp(
        values=absvals[order],
        vectors=eig.vectors[:, order],
        rtilde=eig.rtilde[order],
    )
    return solve_full(flipped, eps, perturb_eps=perturb_eps)


def newton_point_scale(eig, active):
    """Norm of sum_i (rt_i / lambda_i) v_i over the active set; the natural
    initial trust-region radius for the backtracking stages."""
    active = np.asarray(active)
    if active.size == 0:
        return 0.0
    coeff = eig.rtilde[active] / eig.values[active]
    return float(np.linalg.norm(coeff))
