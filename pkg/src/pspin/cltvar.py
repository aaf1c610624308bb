"""Limiting fluctuation constants: d, the fixed-point curve u_t, and nu.

d is the smallest support point of the optimized order-parameter measure
(with the fixed-point equation d = E (d_x Phi(d, h+chi))^2 demoted to a
consistency diagnostic).  For t in (0,1], u_t is the unique fixed point in
[0,d] of

    phi_t(s) = E d_xPhi(d, h+chi^1) d_xPhi(d, h+chi^2),

where (chi^1, chi^2) are centered Gaussians with variance xi'(d) and
covariance t xi'(s); and nu = int_0^1 xi(u_t) dt is the limiting scaled
variance of the free energy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergenceError
from .model import MixingSpec
from .parisi import (
    DiscreteMeasure,
    OptimizeResult,
    ParisiSolution,
    XGrid,
    optimize_measure,
    solve_parisi,
)
from .quad import gauss_hermite, gauss_legendre_01

ATOM_WEIGHT_THRESHOLD = 1e-6


def extract_d(measure: DiscreteMeasure, threshold: float = ATOM_WEIGHT_THRESHOLD) -> float:
    """Smallest atom carrying more than the atom-weight threshold."""
    incr = measure.increments
    carrying = np.flatnonzero(incr > threshold)
    if carrying.size == 0:
        raise ValueError("degenerate measure: no atom carries weight above threshold")
    return float(measure.atoms[carrying[0]])


def check_d_fixed_point(solution: ParisiSolution, d: float, gh_nodes: int = 40) -> float:
    """|d - E (d_xPhi(d, h+chi))^2| with chi centered Gaussian, Var = xi'(d).

    Requires the solution to carry a layer at q = d (atoms always do); used as
    a measure-quality diagnostic.
    """
    spec = solution.spec
    var = spec.xi_prime(d)
    z, w = gauss_hermite(gh_nodes)
    vals = solution.dphi_at_smooth(d, spec.h + math.sqrt(max(var, 0.0)) * z)
    return abs(d - float((vals ** 2) @ w))


def phi_t(solution: ParisiSolution, d: float, t: float, s: float, gh_nodes: int = 40) -> float:
    """E d_xPhi(d, h+chi^1) d_xPhi(d, h+chi^2) at covariance t * xi'(s).

    Computed in the conditional-independence square form: chi^l = alpha z +
    beta g_l with alpha^2 = t xi'(s), beta^2 = xi'(d) - t xi'(s), so the value
    is E_z (E_g d_xPhi(d, h + alpha z + beta g))^2 >= 0 by construction.
    """
    spec = solution.spec
    if not 0.0 <= s <= d + 1e-12:
        raise ValueError("need 0 <= s <= d")
    if not 0.0 < t <= 1.0:
        raise ValueError("need 0 < t <= 1")
    alpha2 = t * spec.xi_prime(min(s, d))
    beta2 = spec.xi_prime(d) - alpha2
    if beta2 < -1e-12:
        raise ValueError("infeasible covariance")
    alpha = math.sqrt(max(alpha2, 0.0))
    beta = math.sqrt(max(beta2, 0.0))
    z, w = gauss_hermite(gh_nodes)
    pts = spec.h + alpha * z[:, None] + beta * z[None, :]
    vals = solution.dphi_at_smooth(d, pts)
    inner = vals @ w
    return float((inner ** 2) @ w)


def solve_u(
    solution: ParisiSolution,
    d: float,
    t: float,
    tol: float = 1e-8,
    gh_nodes: int = 40,
    damping: float = 0.5,
    max_iter: int = 500,
) -> float:
    """Fixed point of s -> phi_t(s) in [0, d] by damped iteration from s = d."""
    s = d
    for _ in range(max_iter):
        value = phi_t(solution, d, t, s, gh_nodes=gh_nodes)
        value = min(max(value, 0.0), d)
        if abs(value - s) <= tol:
            return value
        s = (1.0 - damping) * s + damping * value
    raise NonConvergenceError(
        f"u fixed point did not converge at t={t}",
        last_iterate=s,
        residual=abs(value - s),
    )


def compute_u_prop1(solution: ParisiSolution, t: float, gh_nodes: int = 40) -> float:
    """Overlap concentration constant of the field-frozen (s = 0) systems.

    u = E_g (E_1 d_xPhi(0, h + beta_1 sqrt(t) g + beta_1 sqrt(1-t) g_1))^2,
    from the q = 0 layer.
    """
    spec = solution.spec
    if not 0.0 < t <= 1.0:
        raise ValueError("need 0 < t <= 1")
    if spec.beta1 == 0.0:
        return float(solution.dphi_at_smooth(0.0, np.array([spec.h]))[0] ** 2)
    z, w = gauss_hermite(gh_nodes)
    pts = (
        spec.h
        + spec.beta1 * math.sqrt(t) * z[:, None]
        + spec.beta1 * math.sqrt(1.0 - t) * z[None, :]
    )
    vals = solution.dphi_at_smooth(0.0, pts)
    inner = vals @ w
    return float((inner ** 2) @ w)


@dataclass(frozen=True)
class CltConstants:
    """d, the curve t -> u_t on quadrature nodes, and nu, with provenance."""

    spec: MixingSpec
    measure: DiscreteMeasure
    d: float
    t_nodes: np.ndarray
    u_values: np.ndarray
    nu: float
    diagnostics: dict

    def u_curve(self) -> list:
        return list(zip(self.t_nodes.tolist(), self.u_values.tolist()))


def u_curve_on_nodes(
    spec: MixingSpec,
    solution: ParisiSolution,
    d: float,
    n_nodes: int = 32,
    gh_nodes: int = 40,
    tol: float = 1e-8,
):
    """u_t on open Gauss-Legendre nodes of (0,1); returns (t, u, residuals)."""
    t_nodes, _ = gauss_legendre_01(n_nodes)
    u = np.empty(n_nodes)
    resid = np.empty(n_nodes)
    for i, t in enumerate(t_nodes):
        u[i] = solve_u(solution, d, float(t), tol=tol, gh_nodes=gh_nodes)
        resid[i] = abs(phi_t(solution, d, float(t), u[i], gh_nodes=gh_nodes) - u[i])
    return np.asarray(t_nodes), u, resid


def compute_nu(
    spec: MixingSpec,
    solution: ParisiSolution,
    n_nodes: int = 32,
    gh_nodes: int = 40,
    tol: float = 1e-8,
) -> float:
    """int_0^1 xi(u_t) dt by open Gauss-Legendre quadrature."""
    d = extract_d(solution.measure)
    _, weights = gauss_legendre_01(n_nodes)
    _, u, _ = u_curve_on_nodes(spec, solution, d, n_nodes=n_nodes, gh_nodes=gh_nodes, tol=tol)
    return float(np.dot(spec.xi(u), weights))


def compute_constants(
    spec: MixingSpec,
    measure: DiscreteMeasure | None = None,
    grid: XGrid | None = None,
    gh_nodes: int = 40,
    n_nodes: int = 32,
    k_max: int = 8,
    tol: float = 1e-6,
    u_tol: float = 1e-8,
) -> CltConstants:
    """Full pipeline: optimized measure (unless given), d, u_t curve, nu."""
    diagnostics: dict = {}
    if measure is None:
        opt: OptimizeResult = optimize_measure(
            spec, k_max=k_max, tol=tol, grid=grid, gh_nodes=gh_nodes
        )
        measure = opt.measure
        diagnostics["optimizer_value"] = opt.value
        diagnostics["optimizer_k"] = opt.k
        diagnostics["optimizer_converged"] = opt.converged
    solution = solve_parisi(spec, measure, grid=grid, gh_nodes=gh_nodes)
    d = extract_d(measure)
    diagnostics["d_residual"] = check_d_fixed_point(solution, d, gh_nodes=gh_nodes)
    t_nodes, u, resid = u_curve_on_nodes(
        spec, solution, d, n_nodes=n_nodes, gh_nodes=gh_nodes, tol=u_tol
    )
    _, weights = gauss_legendre_01(n_nodes)
    nu = float(np.dot(spec.xi(u), weights))
    diagnostics["u_max_residual"] = float(resid.max())
    diagnostics["u_at_smallest_node"] = float(u[0])
    diagnostics["u1"] = solve_u(solution, d, 1.0, tol=u_tol, gh_nodes=gh_nodes)
    return CltConstants(
        spec=spec,
        measure=measure,
        d=d,
        t_nodes=t_nodes,
        u_values=u,
        nu=nu,
        diagnostics=diagnostics,
    )
