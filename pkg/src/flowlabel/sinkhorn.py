"""Entropic optimal transport, hard/soft correspondence and label extraction.

Two numerical routes share one entry point, :func:`sinkhorn`:

* the direct route runs the textbook scaling iteration on
  ``K = exp(-C / epsilon)``;
* the log route (``epsilon < 0.01`` or any underflowing kernel entry) keeps
  dual potentials ``f, g`` in the log domain, anneals epsilon geometrically
  down to the target value, and finishes with damped Newton steps on the dual
  when the scaling iteration alone has not met the tolerance.

Both routes converge to the same unique entropic plan.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import PointCloud, PseudoLabelSet

logger = logging.getLogger(__name__)

LOG_DOMAIN_EPSILON = 0.01
DEFAULT_MAX_DISPLACEMENT = 3.5

_ANNEAL_ITERATIONS = 50
_ANNEAL_TOLERANCE = 1e-6
_ABSORB_LIMIT = 1e50
_NEWTON_ITERATIONS = 50
# joint dual dimension above which the dense Newton finish is skipped
_NEWTON_MAX_DIM = 1200
_PINV_RCOND = 1e-13


@dataclass(frozen=True)
class SinkhornParams:
    epsilon: float = 0.03
    max_iterations: int = 100
    marginal_tolerance: float = 1e-9
    # None picks the route automatically; True/False forces it
    log_domain: Optional[bool] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.marginal_tolerance >= 0:
            raise ValueError("marginal_tolerance must be non-negative")


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Entropic transport plan ``diag(a) K diag(b)``.

    The scaling vectors are kept as logarithms because on the log route
    ``a`` and ``b`` themselves can leave floating-point range.
    """

    entries: np.ndarray
    log_a: np.ndarray
    log_b: np.ndarray
    epsilon: float
    iterations: int
    converged: bool
    row_residual: float
    col_residual: float
    log_domain: bool

    @property
    def a(self) -> np.ndarray:
        return np.exp(self.log_a)

    @property
    def b(self) -> np.ndarray:
        return np.exp(self.log_b)

    @property
    def shape(self):
        return self.entries.shape

    def total_cost(self, cost) -> float:
        return float(np.sum(np.asarray(cost) * self.entries))


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    target_index: np.ndarray
    is_valid: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.target_index, dtype=np.intp).reshape(-1)
        valid = np.asarray(self.is_valid, dtype=bool).reshape(-1)
        if len(idx) != len(valid):
            raise ValueError("target_index and is_valid differ in length")
        object.__setattr__(self, "target_index", idx)
        object.__setattr__(self, "is_valid", valid)

    def __len__(self) -> int:
        return len(self.target_index)

    @classmethod
    def from_targets(cls, target_index) -> "CorrespondenceSet":
        idx = np.asarray(target_index, dtype=np.intp)
        return cls(idx, np.ones(len(idx), dtype=bool))


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _check_marginal(mu, n: int, name: str) -> np.ndarray:
    mu = _uniform(n) if mu is None else np.asarray(mu, dtype=np.float64).reshape(-1)
    if len(mu) != n:
        raise ValueError(f"{name} has length {len(mu)}, expected {n}")
    if np.any(mu <= 0) or abs(mu.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must be strictly positive and sum to 1")
    return mu


def sinkhorn(cost, params: SinkhornParams = SinkhornParams(), mu_row=None, mu_col=None) -> TransportPlan:
    """Solve entropy-regularized OT between two discrete measures.

    Parameters
    ----------
    cost : array_like, shape (n, m)
        Finite transport costs.
    params : SinkhornParams
        ``epsilon``, the iteration budget ``max_iterations`` and the early-stop
        ``marginal_tolerance`` (max-norm of both marginal residuals).
    mu_row, mu_col : array_like, optional
        Strictly positive marginals summing to one; uniform by default.

    Returns
    -------
    TransportPlan

    Raises
    ------
    FloatingPointError
        If a scaling update divides by zero or turns non-finite, which means
        epsilon is too small for the cost scale on the direct route.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] == 0 or C.shape[1] == 0:
        raise ValueError(f"cost must be a non-empty matrix, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost entries must be finite")
    mu = _check_marginal(mu_row, C.shape[0], "mu_row")
    nu = _check_marginal(mu_col, C.shape[1], "mu_col")

    use_log = params.log_domain
    K = None
    if use_log is None:
        use_log = params.epsilon < LOG_DOMAIN_EPSILON
        if not use_log:
            with np.errstate(under="ignore"):
                K = np.exp(-C / params.epsilon)
            use_log = bool(np.any(K == 0.0))
            if use_log:
                logger.debug("kernel underflow at epsilon=%g, using log route", params.epsilon)
    if use_log:
        return _sinkhorn_log(C, params, mu, nu)
    if K is None:
        with np.errstate(under="ignore"):
            K = np.exp(-C / params.epsilon)
    return _sinkhorn_direct(C, K, params, mu, nu)


def _scaling_error(eps: float) -> FloatingPointError:
    return FloatingPointError(
        f"Sinkhorn scaling became non-finite; epsilon={eps:g} is likely too small "
        "for the cost scale (try a larger epsilon or the log-domain route)"
    )


def _sinkhorn_direct(C, K, params, mu, nu) -> TransportPlan:
    tol = params.marginal_tolerance
    a = mu.copy()
    b = np.ones(len(nu))
    converged = False
    iterations = 0
    with np.errstate(divide="raise", over="raise", invalid="raise"):
        try:
            for it in range(params.max_iterations):
                KTa = K.T @ a
                if it > 0 and np.max(np.abs(b * KTa - nu)) < tol:
                    converged = True
                    break
                b = nu / KTa
                a = mu / (K @ b)
                iterations = it + 1
        except FloatingPointError as exc:
            raise _scaling_error(params.epsilon) from exc
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise _scaling_error(params.epsilon)
    T = a[:, None] * K * b[None, :]
    row_res, col_res = _residuals(T, mu, nu)
    converged = converged or max(row_res, col_res) < tol
    return TransportPlan(T, np.log(a), np.log(b), params.epsilon, iterations,
                         converged, row_res, col_res, False)


def _residuals(T, mu, nu):
    return (float(np.max(np.abs(T.sum(axis=1) - mu))),
            float(np.max(np.abs(T.sum(axis=0) - nu))))


def _log_kernel(C, f, g, eps):
    with np.errstate(under="ignore"):
        return np.exp((f[:, None] + g[None, :] - C) / eps)


def _scaling_stage(C, f, g, eps, mu, nu, tol, budget):
    """Stabilized scaling iterations around potentials ``f, g``.

    Large or tiny scalings are absorbed back into the potentials so the
    working kernel never under- or overflows.
    """
    K = _log_kernel(C, f, g, eps)
    a = np.ones(len(f))
    b = np.ones(len(g))
    done = 0
    converged = False
    for it in range(budget):
        KTa = K.T @ a
        if it > 0 and np.max(np.abs(b * KTa - nu)) < tol:
            converged = True
            break
        b = nu / KTa
        a = mu / (K @ b)
        done = it + 1
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise _scaling_error(eps)
        if (a.max() > _ABSORB_LIMIT or b.max() > _ABSORB_LIMIT
                or a.min() < 1 / _ABSORB_LIMIT or b.min() < 1 / _ABSORB_LIMIT):
            f = f + eps * np.log(a)
            g = g + eps * np.log(b)
            K = _log_kernel(C, f, g, eps)
            a = np.ones(len(f))
            b = np.ones(len(g))
    return f + eps * np.log(a), g + eps * np.log(b), done, converged


def _dual_value(C, f, g, eps, mu, nu):
    P = _log_kernel(C, f, g, eps)
    return f @ mu + g @ nu - eps * P.sum(), P


def _newton_finish(C, f, g, eps, mu, nu, tol):
    """Damped Newton ascent on the entropic dual.

    One potential is pinned to remove the constant-shift null direction; the
    remaining near-null directions (numerically disconnected blocks of the
    plan) are dropped by a truncated eigen-solve since their gradient is at
    rounding level.
    """
    n, m = C.shape
    val, P = _dual_value(C, f, g, eps, mu, nu)
    for step_count in range(_NEWTON_ITERATIONS):
        r = P.sum(axis=1)
        c = P.sum(axis=0)
        grad_f = mu - r
        grad_g = nu - c
        res = max(np.abs(grad_f).max(), np.abs(grad_g).max())
        if res < tol:
            return f, g, step_count, True
        H = np.empty((n + m - 1, n + m - 1))
        H[:n, :n] = np.diag(r)
        H[n:, n:] = np.diag(c[:-1])
        H[:n, n:] = P[:, :-1]
        H[n:, :n] = P[:, :-1].T
        H /= eps
        rhs = np.concatenate([grad_f, grad_g[:-1]])
        w, V = np.linalg.eigh(H)
        keep = w > w[-1] * _PINV_RCOND
        d = V[:, keep] @ ((V[:, keep].T @ rhs) / w[keep])
        df = d[:n]
        dg = np.append(d[n:], 0.0)
        slope = grad_f @ df + grad_g @ dg
        step = 1.0
        while True:
            nf = f + step * df
            ng = g + step * dg
            with np.errstate(over="ignore", invalid="ignore"):
                nval, nP = _dual_value(C, nf, ng, eps, mu, nu)
            if np.isfinite(nval):
                new_res = max(np.abs(mu - nP.sum(axis=1)).max(), np.abs(nu - nP.sum(axis=0)).max())
                # near the optimum the dual value stalls at rounding level, so a
                # step that shrinks the residual enough is also accepted
                if nval >= val + 1e-4 * step * slope or new_res < 0.5 * res:
                    break
            step *= 0.5
            if step < 1e-12:
                return f, g, step_count, False
        f, g, val, P = nf, ng, nval, nP
    P = _log_kernel(C, f, g, eps)
    res = max(np.abs(mu - P.sum(axis=1)).max(), np.abs(nu - P.sum(axis=0)).max())
    return f, g, _NEWTON_ITERATIONS, res < tol


def _sinkhorn_log(C, params, mu, nu) -> TransportPlan:
    eps = params.epsilon
    tol = params.marginal_tolerance
    n, m = C.shape
    # potentials start dual-feasible with a zero-slack entry in every row and column
    f = C.min(axis=1)
    g = (C - f[:, None]).min(axis=0)
    iterations = 0
    stage_eps = max(float(C.max() - C.min()), eps)
    while stage_eps > eps:
        f, g, done, _ = _scaling_stage(C, f, g, stage_eps, mu, nu,
                                       _ANNEAL_TOLERANCE, _ANNEAL_ITERATIONS)
        iterations += done
        stage_eps *= 0.5
    f, g, done, converged = _scaling_stage(C, f, g, eps, mu, nu, tol, params.max_iterations)
    iterations += done
    if not converged and n + m <= _NEWTON_MAX_DIM:
        f, g, steps, converged = _newton_finish(C, f, g, eps, mu, nu, tol)
        iterations += steps
    T = _log_kernel(C, f, g, eps)
    row_res, col_res = _residuals(T, mu, nu)
    converged = converged or max(row_res, col_res) < tol
    if not converged:
        logger.debug("log-domain Sinkhorn stopped with residual %.3g", max(row_res, col_res))
    # a = exp(f/eps), b = exp(g/eps) relative to K = exp(-C/eps)
    return TransportPlan(T, f / eps, g / eps, eps, iterations, converged,
                         row_res, col_res, True)


def _entries(plan) -> np.ndarray:
    return plan.entries if isinstance(plan, TransportPlan) else np.asarray(plan, dtype=np.float64)


def harden(plan) -> CorrespondenceSet:
    """Row-wise argmax of the plan; ties go to the lowest column index."""
    T = _entries(plan)
    if T.ndim != 2 or T.shape[1] == 0:
        raise ValueError("plan must have at least one column")
    return CorrespondenceSet.from_targets(np.argmax(T, axis=1))


def greedy_search(cost) -> CorrespondenceSet:
    """Unconstrained baseline: each row picks its cheapest column."""
    C = np.asarray(cost, dtype=np.float64)
    return CorrespondenceSet.from_targets(np.argmin(C, axis=1))


def soft_match(plan, target) -> np.ndarray:
    """Plan-weighted barycenter of the target points for every source row."""
    T = _entries(plan)
    pts = target.positions if isinstance(target, PointCloud) else np.asarray(target, dtype=np.float64)
    if T.shape[1] != len(pts):
        raise ValueError(f"plan has {T.shape[1]} columns but target has {len(pts)} points")
    mass = T.sum(axis=1)
    if np.any(mass <= 0):
        raise ValueError("plan has a row with zero total mass")
    return (T @ pts) / mass[:, None]


def labels_from_points(source: PointCloud, matched, max_displacement: float = DEFAULT_MAX_DISPLACEMENT,
                       valid=None) -> PseudoLabelSet:
    """Labels ``matched - source`` with the displacement filter applied."""
    if not max_displacement > 0:
        raise ValueError("max_displacement must be positive")
    matched = np.asarray(matched, dtype=np.float64)
    if matched.shape != source.positions.shape:
        raise ValueError("matched points do not align with the source cloud")
    labels = matched - source.positions
    ok = np.linalg.norm(labels, axis=1) <= max_displacement
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    return PseudoLabelSet(labels, ok)


def extract_labels(source: PointCloud, target: PointCloud, corr: CorrespondenceSet,
                   max_displacement: float = DEFAULT_MAX_DISPLACEMENT) -> PseudoLabelSet:
    """Pseudo labels ``Q[target_index] - P`` for hard correspondences.

    ``source`` must be the original first cloud, not a pre-warped copy, so the
    label measures the full displacement. Labels longer than
    ``max_displacement`` are marked invalid.
    """
    if len(corr) != len(source):
        raise ValueError("correspondence length does not match source size")
    idx = corr.target_index
    if len(idx) and (idx.min() < 0 or idx.max() >= len(target)):
        raise IndexError("correspondence index out of range")
    return labels_from_points(source, target.positions[idx], max_displacement, corr.is_valid)
