"""Shared numerical kernels.

Damped Newton root finding for vector estimating equations, Gauss-Legendre
rules for finite and semi-infinite domains, central-difference Jacobians and
guarded linear algebra.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonConvergence, NonFinite, SingularJacobian

COND_LIMIT = 1e12

FINITE = "finite"
SEMI_INFINITE = "semi_infinite"
SEMI_INFINITE_LOG = "semi_infinite_log"
RULE_KINDS = (FINITE, SEMI_INFINITE, SEMI_INFINITE_LOG)


@dataclass(frozen=True)
class SolverConfig:
    """Settings for :func:`solve_estimating_equation`.

    Parameters
    ----------
    max_iterations : int
        Maximum number of Newton steps.
    tolerance : float
        Convergence threshold on the sup-norm of the estimating function.
    step_halving_max : int
        Maximum number of step halvings per Newton step.
    fd_step : float
        Relative step used for the finite-difference Jacobian.
    """

    max_iterations: int = 50
    tolerance: float = 1e-8
    step_halving_max: int = 30
    fd_step: float = 1e-6

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.step_halving_max < 0:
            raise ValueError("step_halving_max must be non-negative")
        if not 0 < self.fd_step <= 1e-2:
            raise ValueError("fd_step must lie in (0, 1e-2]")


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature nodes and weights.

    For the finite kind the nodes live on the integration interval. For the
    two semi-infinite kinds the nodes ``t`` and weights are those of the
    standard domain (0, inf); an integral over (lower, inf) with scale ``s``
    uses nodes ``lower + s * t`` and weights ``s * w``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = SEMI_INFINITE

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-d arrays of equal length")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be positive")
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown rule kind {self.kind!r}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.nodes.size

    def semi_infinite_nodes(self, lower, scale=1.0):
        """Nodes and weights on (lower, inf), broadcast over ``lower``/``scale``.

        Returns arrays of shape ``broadcast(lower, scale).shape + (K,)``.
        """
        if self.kind == FINITE:
            raise ValueError("rule is not configured for a semi-infinite domain")
        lower = np.asarray(lower, dtype=float)[..., None]
        scale = np.asarray(scale, dtype=float)[..., None]
        return lower + scale * self.nodes, scale * self.weights


def gauss_legendre(n_nodes: int = 64, a: float = -1.0, b: float = 1.0) -> QuadratureRule:
    """Gauss-Legendre rule on the finite interval [a, b]."""
    u, w = np.polynomial.legendre.leggauss(n_nodes)
    half = 0.5 * (b - a)
    return QuadratureRule(half * u + 0.5 * (a + b), half * w, FINITE)


def semi_infinite_rule(n_nodes: int = 64, kind: str = SEMI_INFINITE,
                       spread: float = 2.0) -> QuadratureRule:
    """Gauss-Legendre rule mapped onto (0, inf).

    ``kind="semi_infinite"`` uses x = u / (1 - u) with u in (0, 1); it is very
    accurate for integrands that are smooth at the origin.
    ``kind="semi_infinite_log"`` uses x = exp(v) with v = spread * r / (1 - r^2),
    r in (-1, 1), which also handles integrable power singularities at the
    lower limit (e.g. Weibull densities with shape below one).
    """
    r, w = np.polynomial.legendre.leggauss(n_nodes)
    if kind == SEMI_INFINITE:
        u = 0.5 * (r + 1.0)
        t = u / (1.0 - u)
        wt = 0.5 * w / (1.0 - u) ** 2
    elif kind == SEMI_INFINITE_LOG:
        v = spread * r / (1.0 - r**2)
        dv = spread * (1.0 + r**2) / (1.0 - r**2) ** 2
        with np.errstate(over="ignore", under="ignore"):
            t = np.exp(v)
            wt = w * dv * t
        keep = np.isfinite(t) & np.isfinite(wt) & (t > 0) & (wt > 0)
        t, wt = t[keep], wt[keep]
    else:
        raise ValueError(f"not a semi-infinite kind: {kind!r}")
    return QuadratureRule(t, wt, kind)


DEFAULT_RULE = semi_infinite_rule(64)


def integrate_lower_truncated(g: Callable, lower: float, rule: QuadratureRule = DEFAULT_RULE,
                              scale: float = 1.0) -> float:
    """Approximate the integral of ``g`` over (lower, inf).

    Parameters
    ----------
    g : callable
        Integrand. Called with an array of nodes; scalar-only callables are
        evaluated node by node.
    lower : float
        Lower limit.
    rule : QuadratureRule
        A semi-infinite rule.
    scale : float, optional
        Characteristic length of the integrand. Nodes are placed at
        ``lower + scale * t``.

    Raises
    ------
    NonFinite
        If ``g`` returns NaN or an infinite value at a node.
    """
    x, w = rule.semi_infinite_nodes(float(lower), float(scale))
    try:
        vals = np.asarray(g(x), dtype=float)
    except (TypeError, ValueError):
        vals = None
    if vals is None or vals.shape != x.shape:
        vals = np.array([float(g(xi)) for xi in x])
    if not np.all(np.isfinite(vals)):
        raise NonFinite("integrand is not finite at a quadrature node")
    return float(np.dot(w, vals))


def finite_diff_jacobian(f: Callable, at, fd_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a vector function.

    Entry (i, j) is ``[f_i(at + h e_j) - f_i(at - h e_j)] / (2 h)`` with
    ``h = fd_step * max(1, |at_j|)``.
    """
    at = np.asarray(at, dtype=float)
    columns = []
    for j in range(at.size):
        h = fd_step * max(1.0, abs(at[j]))
        up = at.copy()
        dn = at.copy()
        up[j] += h
        dn[j] -= h
        columns.append((np.atleast_1d(np.asarray(f(up), dtype=float))
                        - np.atleast_1d(np.asarray(f(dn), dtype=float))) / (2 * h))
    jac = np.column_stack(columns)
    if not np.all(np.isfinite(jac)):
        raise NonFinite("finite-difference Jacobian has non-finite entries")
    return jac


def checked_solve(mat, rhs, error=SingularJacobian, what="matrix", cond_limit=COND_LIMIT):
    """Solve ``mat @ x = rhs`` after a condition-number guard."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if not np.all(np.isfinite(mat)):
        raise error(f"{what} has non-finite entries")
    cond = np.linalg.cond(mat)
    if not np.isfinite(cond) or cond > cond_limit:
        raise error(f"{what} is numerically singular (condition number {cond:.3g})")
    return np.linalg.solve(mat, rhs)


def checked_inverse(mat, error=SingularJacobian, what="matrix", cond_limit=COND_LIMIT):
    """Inverse of a square matrix after a condition-number guard."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    return checked_solve(mat, np.eye(mat.shape[0]), error=error, what=what,
                         cond_limit=cond_limit)


def _norm(value) -> float:
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)):
        return np.inf
    return float(np.linalg.norm(value))


def solve_estimating_equation(phi: Callable, start, config: SolverConfig | None = None,
                              jacobian: Callable | None = None) -> np.ndarray:
    """Find a root of a vector estimating function by damped Newton steps.

    Parameters
    ----------
    phi : callable
        Maps a parameter vector to a vector of the same length. May return
        NaN outside its domain; such points are rejected by the line search.
    start : array_like
        Finite starting value.
    config : SolverConfig, optional
    jacobian : callable, optional
        Analytic Jacobian; defaults to central differences of ``phi``.

    Returns
    -------
    numpy.ndarray
        A point where the sup-norm of ``phi`` is at most ``config.tolerance``.

    Raises
    ------
    NonConvergence
        Iterations exhausted, no step reduces the residual, or the residual
        only becomes small because the iterates run off to infinity.
    SingularJacobian
        The Jacobian is numerically rank deficient at an iterate.
    """
    config = config or SolverConfig()
    x = np.atleast_1d(np.asarray(start, dtype=float)).copy()
    if not np.all(np.isfinite(x)):
        raise NonFinite("starting value is not finite")

    def residual(p):
        return np.atleast_1d(np.asarray(phi(p), dtype=float))

    f = residual(x)
    if not np.all(np.isfinite(f)):
        raise NonFinite("estimating function is not finite at the starting value")
    def newton_step(p, fp):
        if jacobian is None:
            jac = finite_diff_jacobian(residual, p, config.fd_step)
        else:
            jac = np.atleast_2d(np.asarray(jacobian(p), dtype=float))
        return checked_solve(jac, -fp, SingularJacobian, "Jacobian")

    def accept(p, fp):
        # a small residual only counts if Newton would also barely move: an
        # estimating function that decays at infinity has no root out there
        if np.max(np.abs(fp)) > config.tolerance:
            return False
        step = newton_step(p, fp)
        if np.max(np.abs(step)) > np.sqrt(config.tolerance) * (1.0 + np.max(np.abs(p))):
            raise NonConvergence("residual vanishes only asymptotically; no finite root")
        return True

    for _ in range(config.max_iterations):
        if accept(x, f):
            return x
        step = newton_step(x, f)
        current = _norm(f)
        lam = 1.0
        for _ in range(config.step_halving_max + 1):
            trial = x + lam * step
            f_trial = residual(trial)
            if _norm(f_trial) < current:
                break
            lam *= 0.5
        else:
            raise NonConvergence(
                f"line search failed to reduce the residual (sup-norm {np.max(np.abs(f)):.3g})")
        x, f = trial, f_trial
    if accept(x, f):
        return x
    raise NonConvergence(
        f"no convergence in {config.max_iterations} iterations "
        f"(sup-norm {np.max(np.abs(f)):.3g})")
