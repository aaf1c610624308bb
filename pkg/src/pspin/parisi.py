"""Backward recursion for the replica functional and its coupled two-replica form.

For a step-function order parameter (k atoms), the terminal-value problem is
solved segment by segment: on a segment where the CDF value m is constant the
evolution is exactly

    Phi(q_lo, x) = (1/m) log E_z exp(m * Phi(q_hi, x + z a)),    a^2 = xi'(q_hi) - xi'(q_lo),

with the plain Gaussian average in the m = 0 case.  Composing sub-segments of
equal total variance reproduces the segment exactly (Hopf-Cole), so extra
layers may be inserted freely for diagnostics.  The x-derivative is pushed
through the same recursion analytically as a reweighted average, which keeps
it within [-1, 1] by construction and far more accurate than differencing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.optimize import minimize

from .errors import NonConvergenceError
from .model import MixingSpec
from .quad import gauss_hermite

LOG2 = math.log(2.0)


def logcosh(x):
    x = np.asarray(x, dtype=float)
    return np.abs(x) + np.log1p(np.exp(-2.0 * np.abs(x))) - LOG2


# --------------------------------------------------------------------------
# measures and grids
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteMeasure:
    """A k-atom probability measure on [0,1] as a step-function CDF.

    mu([0,q]) = cdf[j] for q in [atoms[j], atoms[j+1]); cdf[0] applies below
    the first atom and cdf[-1] = 1.
    """

    atoms: tuple
    cdf: tuple

    def __post_init__(self):
        atoms = tuple(float(q) for q in self.atoms)
        cdf = tuple(float(m) for m in self.cdf)
        if len(cdf) != len(atoms) + 1:
            raise ValueError("cdf must have one more entry than atoms")
        if any(q2 <= q1 for q1, q2 in zip(atoms, atoms[1:])):
            raise ValueError("atoms must be strictly increasing")
        if atoms and (atoms[0] < 0.0 or atoms[-1] > 1.0):
            raise ValueError("atoms must lie in [0, 1]")
        if any(m2 < m1 for m1, m2 in zip(cdf, cdf[1:])):
            raise ValueError("cdf must be nondecreasing")
        if cdf[0] < 0.0 or abs(cdf[-1] - 1.0) > 1e-12:
            raise ValueError("cdf must start >= 0 and end at 1")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "cdf", cdf)

    @classmethod
    def from_weights(cls, atoms, weights) -> "DiscreteMeasure":
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        cdf = np.concatenate([[0.0], np.cumsum(w)])
        cdf /= cdf[-1]
        cdf[-1] = 1.0
        return cls(atoms=tuple(atoms), cdf=tuple(cdf))

    @property
    def increments(self) -> np.ndarray:
        return np.diff(np.asarray(self.cdf))

    def value_at(self, q: float) -> float:
        """mu([0, q])."""
        j = np.searchsorted(np.asarray(self.atoms), q, side="right")
        return self.cdf[j]

    def layer_points(self, extra=()) -> np.ndarray:
        pts = np.unique(np.concatenate([[0.0, 1.0], self.atoms, list(extra)]))
        if pts[0] < -1e-12 or pts[-1] > 1.0 + 1e-12:
            raise ValueError("layers must lie in [0, 1]")
        return np.clip(pts, 0.0, 1.0)


@dataclass(frozen=True)
class XGrid:
    """Symmetric uniform grid on [-L, L] with x=0 a node (odd node count)."""

    half_width: float = 10.0
    spacing: float = 1.0 / 64

    def __post_init__(self):
        if self.half_width < 1.0 or self.spacing <= 0:
            raise ValueError("bad grid parameters")

    @property
    def nodes(self) -> np.ndarray:
        k = round(self.half_width / self.spacing)
        return self.spacing * np.arange(-k, k + 1)


COUPLED_GRID = XGrid(half_width=8.0, spacing=1.0 / 32)
COUPLED_GH_NODES = 24
_MAX_COUPLED_NODES = 4_000_000  # memory guard on the 2D tensor grid


# --------------------------------------------------------------------------
# one-replica solver
# --------------------------------------------------------------------------

def _interp_1d(kind: str, x, y, axis: int = 0):
    """Value interpolator: monotone cubic (default) or natural cubic spline.

    The spline is linear in the data, which the coupled solver relies on; the
    monotone default cannot overshoot, which the derivative bound relies on.
    """
    if kind == "pchip":
        return PchipInterpolator(x, y, axis=axis)
    if kind == "spline":
        return CubicSpline(x, y, axis=axis, bc_type="natural")
    raise ValueError(f"unknown interpolation kind {kind!r}")


def _phi_eval(x: np.ndarray, phi: np.ndarray, interp, pts: np.ndarray) -> np.ndarray:
    """Evaluate a layer at pts with Lipschitz-1 linear tails beyond the grid."""
    lo, hi = x[0], x[-1]
    out = interp(np.clip(pts, lo, hi))
    mask = pts > hi
    if mask.any():
        out[mask] = phi[-1] + (pts[mask] - hi)
    mask = pts < lo
    if mask.any():
        out[mask] = phi[0] - (pts[mask] - lo)
    return out


def _segment_step(phi, dphi, m, a, x, z, w, kind="pchip"):
    """One backward segment: Gaussian smear of width a at CDF value m."""
    interp_phi = _interp_1d(kind, x, phi)
    interp_dphi = PchipInterpolator(x, dphi)
    pts = x[:, None] + a * z[None, :]
    lo, hi = x[0], x[-1]
    clipped = np.clip(pts, lo, hi)
    PHI = interp_phi(clipped)
    above = pts > hi
    below = pts < lo
    if above.any():
        PHI[above] = phi[-1] + (pts[above] - hi)
    if below.any():
        PHI[below] = phi[0] - (pts[below] - lo)
    DPHI = interp_dphi(clipped)  # derivative clamps to its boundary values
    if m < 1e-14:
        return PHI @ w, DPHI @ w
    c = PHI.max(axis=1)
    em1 = np.expm1(m * (PHI - c[:, None]))
    y = em1 @ w
    new_phi = c + np.log1p(y + (np.sum(w) - 1.0)) / m
    weights = em1 + 1.0
    new_dphi = ((weights * DPHI) @ w) / (y + np.sum(w))
    return new_phi, new_dphi


@dataclass
class ParisiSolution:
    """Layered solution grids Phi(q_j, .) and d_x Phi(q_j, .)."""

    spec: MixingSpec
    measure: DiscreteMeasure
    grid: XGrid
    gh_nodes: int
    layer_q: np.ndarray
    phi: np.ndarray   # (n_layers, n_x)
    dphi: np.ndarray  # (n_layers, n_x)
    interpolation: str = "pchip"
    _interp: dict = field(default_factory=dict, repr=False)

    def layer_index(self, q: float) -> int:
        idx = int(np.argmin(np.abs(self.layer_q - q)))
        if abs(self.layer_q[idx] - q) > 1e-9:
            raise KeyError(f"no layer at q={q}")
        return idx

    def _interpolators(self, idx: int):
        pair = self._interp.get(idx)
        if pair is None:
            x = self.grid.nodes
            pair = (
                _interp_1d(self.interpolation, x, self.phi[idx]),
                PchipInterpolator(x, self.dphi[idx]),
            )
            self._interp[idx] = pair
        return pair

    def phi_at(self, q: float, pts) -> np.ndarray:
        idx = self.layer_index(q)
        interp, _ = self._interpolators(idx)
        return _phi_eval(self.grid.nodes, self.phi[idx], interp, np.asarray(pts, float))

    def dphi_at(self, q: float, pts) -> np.ndarray:
        idx = self.layer_index(q)
        _, interp = self._interpolators(idx)
        x = self.grid.nodes
        return interp(np.clip(np.asarray(pts, float), x[0], x[-1]))

    def dphi_at_smooth(self, q: float, pts) -> np.ndarray:
        """Spline evaluation of the derivative layer, for diagnostics.

        One interpolation order higher than the monotone default; may
        overshoot the [-1, 1] band by O(h^4), which consumers must tolerate.
        """
        idx = self.layer_index(q)
        key = ("smooth", idx)
        interp = self._interp.get(key)
        if interp is None:
            x = self.grid.nodes
            interp = CubicSpline(x, self.dphi[idx], bc_type="natural")
            self._interp[key] = interp
        x = self.grid.nodes
        return interp(np.clip(np.asarray(pts, float), x[0], x[-1]))


def _interval_m_values(measure: DiscreteMeasure, layers: np.ndarray) -> list:
    return [
        measure.value_at(0.5 * (layers[j] + layers[j + 1]))
        for j in range(len(layers) - 1)
    ]


def _true_breakpoints(layers: np.ndarray, m_vals: list) -> list:
    """Layer indices where the CDF value actually changes (plus the ends).

    Between breakpoints the evolution is a single Gaussian smear, so layers
    interior to a constant-m span are computed as one-pass offshoots of the
    span top; splitting a span never changes the stored solution.
    """
    idx = [0]
    for j in range(1, len(layers) - 1):
        if m_vals[j - 1] != m_vals[j]:
            idx.append(j)
    idx.append(len(layers) - 1)
    return idx


def solve_parisi(
    spec: MixingSpec,
    measure: DiscreteMeasure,
    grid: XGrid | None = None,
    gh_nodes: int = 40,
    extra_layers=(),
    interpolation: str = "pchip",
) -> ParisiSolution:
    """Backward recursion from q=1 with terminal data log cosh x.

    Layers are produced at 0, 1, every atom, and any extra_layers; inserting
    extra layers (or zero-weight atoms) does not change the solution at the
    other layers (exact composition).  The 'spline' interpolation mode exists
    to compare like-for-like with the coupled solver; the default is the
    monotone scheme.
    """
    grid = grid or XGrid()
    x = grid.nodes
    z, w = gauss_hermite(gh_nodes)
    layers = measure.layer_points(extra=extra_layers)
    m_vals = _interval_m_values(measure, layers)
    bps = _true_breakpoints(layers, m_vals)

    def step(state, m, q_hi, q_lo):
        a2 = spec.xi_prime(q_hi) - spec.xi_prime(q_lo)
        if a2 < -1e-12:
            raise ValueError("xi' must be nondecreasing")
        if a2 <= 1e-15:
            return state[0].copy(), state[1].copy()
        out = _segment_step(
            state[0], state[1], m, math.sqrt(a2), x, z, w, kind=interpolation
        )
        if not all(np.all(np.isfinite(v)) for v in out):
            raise ArithmeticError("non-finite values in the recursion")
        return out

    states: list = [None] * len(layers)
    states[-1] = (logcosh(x), np.tanh(x))
    for bi in range(len(bps) - 1, 0, -1):
        hi, lo = bps[bi], bps[bi - 1]
        m = m_vals[lo]
        for j in range(hi - 1, lo, -1):
            states[j] = step(states[hi], m, layers[hi], layers[j])
        states[lo] = step(states[hi], m, layers[hi], layers[lo])
    return ParisiSolution(
        spec=spec,
        measure=measure,
        grid=grid,
        gh_nodes=gh_nodes,
        layer_q=layers,
        phi=np.asarray([s[0] for s in states]),
        dphi=np.asarray([s[1] for s in states]),
        interpolation=interpolation,
    )


def measure_penalty(spec: MixingSpec, measure: DiscreteMeasure) -> float:
    """int_0^1 xi''(q) q mu([0,q]) dq in closed form (piecewise polynomial)."""
    layers = measure.layer_points()
    total = 0.0
    for a, b in zip(layers[:-1], layers[1:]):
        m = measure.value_at(0.5 * (a + b))
        total += m * spec.xi_penalty_segment(a, b)
    return total


def parisi_functional(
    spec: MixingSpec,
    measure: DiscreteMeasure,
    grid: XGrid | None = None,
    gh_nodes: int = 40,
    solution: ParisiSolution | None = None,
) -> float:
    """log 2 + E Phi(0, h + beta_1 g) - (1/2) int xi''(q) q mu([0,q]) dq."""
    if solution is None:
        solution = solve_parisi(spec, measure, grid=grid, gh_nodes=gh_nodes)
    if spec.beta1 > 0:
        z, w = gauss_hermite(gh_nodes)
        field_term = float(solution.phi_at(0.0, spec.h + spec.beta1 * z) @ w)
    else:
        field_term = float(solution.phi_at(0.0, np.array([spec.h]))[0])
    return LOG2 + field_term - 0.5 * measure_penalty(spec, measure)


# --------------------------------------------------------------------------
# measure optimization
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimizeResult:
    measure: DiscreteMeasure
    value: float
    k: int
    values_by_k: dict
    converged: bool


def _theta_to_measure(theta: np.ndarray, k: int) -> DiscreteMeasure:
    sticks = np.exp(np.clip(theta[:k], -30, 30))
    csum = np.cumsum(sticks)
    atoms = csum / (csum[-1] + 1.0)
    wlog = np.concatenate([theta[k:], [0.0]])
    wlog = wlog - wlog.max()
    wts = np.exp(np.clip(wlog, -30, 30))
    wts /= wts.sum()
    return DiscreteMeasure.from_weights(atoms, wts)


def _measure_to_theta(atoms: np.ndarray, weights: np.ndarray) -> np.ndarray:
    atoms = np.clip(np.asarray(atoms, float), 1e-6, 1.0 - 1e-6)
    gaps = np.diff(np.concatenate([[0.0], atoms]))
    last = 1.0 - atoms[-1]
    theta_a = np.log(np.maximum(gaps, 1e-12) / max(last, 1e-12))
    w = np.maximum(np.asarray(weights, float), 1e-12)
    theta_w = np.log(w[:-1] / w[-1])
    return np.concatenate([theta_a, theta_w])


def degenerate_overlap_fixed_point(spec: MixingSpec, gh_nodes: int = 80) -> float:
    """For specs with no p>=2 terms: the root of q = E tanh^2(h + beta_1 z)."""
    z, w = gauss_hermite(gh_nodes)
    return float(np.tanh(spec.h + spec.beta1 * z) ** 2 @ w)


def _starts_for_k(k: int, previous: DiscreteMeasure | None) -> list:
    starts = []
    for lo, hi in ((0.02, 0.6), (0.15, 0.9)):
        atoms = lo + (hi - lo) * (np.arange(1, k + 1)) / (k + 1.0)
        starts.append(_measure_to_theta(atoms, np.full(k, 1.0 / k)))
    if previous is not None and len(previous.atoms) == k - 1:
        prev_atoms = np.asarray(previous.atoms)
        prev_w = np.maximum(previous.increments, 1e-8)
        support = np.concatenate([[0.0], prev_atoms, [1.0]])
        gaps = np.diff(support)
        g = int(np.argmax(gaps))
        new_atom = 0.5 * (support[g] + support[g + 1])
        atoms = np.sort(np.concatenate([prev_atoms, [new_atom]]))
        pos = int(np.searchsorted(prev_atoms, new_atom))
        wts = np.insert(prev_w / prev_w.sum() * 0.98, pos, 0.02)
        starts.append(_measure_to_theta(atoms, wts))
    return starts


SEARCH_GRID = XGrid(half_width=8.0, spacing=1.0 / 32)
SEARCH_GH_NODES = 24


def optimize_measure(
    spec: MixingSpec,
    k_max: int = 8,
    tol: float = 1e-6,
    grid: XGrid | None = None,
    gh_nodes: int = 40,
    maxiter_per_dim: int = 250,
) -> OptimizeResult:
    """Minimize the functional over k-atom measures, escalating k.

    Derivative-free simplex search from deterministic multistarts on a coarse
    grid; k grows until the improvement over the previous level is below tol
    (k <= k_max).  The smallest k within tol of the best value wins and its
    measure is polished and re-valued on the requested grid.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    grid = grid or XGrid()

    if not spec.active_orders(min_p=2):
        # No diffusion and no penalty: the functional is measure-independent.
        # Return the physical single atom (the overlap concentration point),
        # which is also the d fixed point.
        q = degenerate_overlap_fixed_point(spec)
        atoms = (min(max(q, 0.0), 1.0),)
        measure = DiscreteMeasure(atoms=atoms, cdf=(0.0, 1.0))
        value = parisi_functional(spec, measure, grid=grid, gh_nodes=gh_nodes)
        return OptimizeResult(
            measure=measure, value=value, k=1, values_by_k={1: value}, converged=True
        )

    def objective(theta, k, use_grid, use_nodes):
        try:
            measure = _theta_to_measure(theta, k)
        except ValueError:  # collapsed atoms from extreme parameters
            return 1e6
        return parisi_functional(spec, measure, grid=use_grid, gh_nodes=use_nodes)

    def search(theta0, k, use_grid, use_nodes, maxiter):
        return minimize(
            objective,
            theta0,
            args=(k, use_grid, use_nodes),
            method="Nelder-Mead",
            options={"maxiter": maxiter, "xatol": 1e-6, "fatol": 1e-11},
        )

    theta_by_k: dict = {}
    values_by_k: dict = {}
    converged = True
    previous_measure = None
    for k in range(1, k_max + 1):
        dim = 2 * k - 1
        best = None
        for theta0 in _starts_for_k(k, previous_measure):
            res = search(theta0, k, SEARCH_GRID, SEARCH_GH_NODES, maxiter_per_dim * dim)
            if best is None or res.fun < best.fun:
                best = res
        if not best.success:
            converged = False
        theta_by_k[k] = best.x
        values_by_k[k] = float(best.fun)
        previous_measure = _theta_to_measure(best.x, k)
        if k > 1 and values_by_k[k - 1] - values_by_k[k] < tol:
            break

    best_value = min(values_by_k.values())
    k_star = min(k for k, v in values_by_k.items() if v <= best_value + tol)
    dim = 2 * k_star - 1
    polish = search(theta_by_k[k_star], k_star, grid, gh_nodes, 400 * dim)
    if not polish.success:
        converged = False
    # The interpolation bias of the solve shifts the argmin by O(spacing^2),
    # which matters on flat landscapes; refine the atom positions on a finer
    # grid from a tight initial simplex, then report the value on the
    # requested grid.
    refine_grid = XGrid(grid.half_width, min(grid.spacing, 1.0 / 256))
    simplex = np.repeat(polish.x[None, :], dim + 1, axis=0)
    for i in range(dim):
        simplex[i + 1, i] += 1e-3
    refine = minimize(
        objective,
        polish.x,
        args=(k_star, refine_grid, gh_nodes),
        method="Nelder-Mead",
        options={
            "maxiter": 60 * dim,
            "xatol": 1e-7,
            "fatol": 1e-12,
            "initial_simplex": simplex,
        },
    )
    measure = _theta_to_measure(refine.x, k_star)
    value = parisi_functional(spec, measure, grid=grid, gh_nodes=gh_nodes)
    return OptimizeResult(
        measure=measure,
        value=value,
        k=k_star,
        values_by_k=values_by_k,
        converged=converged,
    )


# --------------------------------------------------------------------------
# coupled two-replica solver
# --------------------------------------------------------------------------

def coupled_boundary(lam: float, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """log(cosh x1 cosh x2 cosh lam + sinh x1 sinh x2 sinh lam), stably.

    Equals the log of (1/4) sum_{e1,e2=+-1} exp(e1 x1 + e2 x2 + lam e1 e2).
    """
    X1, X2 = np.broadcast_arrays(x1, x2)
    terms = np.stack(
        [
            e1 * X1 + e2 * X2 + lam * e1 * e2
            for e1 in (1.0, -1.0)
            for e2 in (1.0, -1.0)
        ]
    )
    c = terms.max(axis=0)
    return c + np.log(np.exp(terms - c).sum(axis=0)) - math.log(4.0)


def _tensor_eval(x: np.ndarray, layer: np.ndarray, pts1: np.ndarray, pts2: np.ndarray) -> np.ndarray:
    """Evaluate a 2D layer at the product grid pts1 x pts2 (Lipschitz-1 tails).

    Tensor natural splines: interpolate along axis 0 then axis 1.  The spline
    is linear in the data, so separable-sum data stays exactly separable and
    differentiating the scheme in a data parameter (the tilt) commutes with
    interpolation.
    """
    lo, hi = x[0], x[-1]
    p1 = np.asarray(pts1, float)
    p2 = np.asarray(pts2, float)
    v = CubicSpline(x, layer, axis=0, bc_type="natural")(np.clip(p1, lo, hi))
    over = p1 > hi
    if over.any():
        v[over, :] = layer[-1, :][None, :] + (p1[over] - hi)[:, None]
    under = p1 < lo
    if under.any():
        v[under, :] = layer[0, :][None, :] - (p1[under] - lo)[:, None]
    out = CubicSpline(x, v, axis=1, bc_type="natural")(np.clip(p2, lo, hi))
    over = p2 > hi
    if over.any():
        out[:, over] = v[:, -1][:, None] + (p2[over] - hi)[None, :]
    under = p2 < lo
    if under.any():
        out[:, under] = v[:, 0][:, None] - (p2[under] - lo)[None, :]
    return out


@dataclass
class CoupledSolution:
    """Layered 2D solution grids Psi(q_j; x1, x2) for one tilt lambda."""

    spec: MixingSpec
    measure: DiscreteMeasure
    lam: float
    grid: XGrid
    gh_nodes: int
    layer_q: np.ndarray
    psi: np.ndarray  # (n_layers, n_x, n_x)

    def layer_index(self, q: float) -> int:
        idx = int(np.argmin(np.abs(self.layer_q - q)))
        if abs(self.layer_q[idx] - q) > 1e-9:
            raise KeyError(f"no layer at q={q}")
        return idx

    def psi_at(self, q: float, pts1, pts2) -> np.ndarray:
        """Values on the product grid pts1 x pts2 at layer q."""
        idx = self.layer_index(q)
        return _tensor_eval(self.grid.nodes, self.psi[idx], pts1, pts2)


def _coupled_segment_step(psi, m, a, x, z, w):
    nz = len(z)
    nx = len(x)
    lo, hi = x[0], x[-1]
    pts = x[None, :] + a * z[:, None]  # (nz, nx) shifted grids
    interp0 = CubicSpline(x, psi, axis=0, bc_type="natural")
    stack = np.empty((nz, nx, nx))
    for i in range(nz):
        p = pts[i]
        v = interp0(np.clip(p, lo, hi))
        over = p > hi
        if over.any():
            v[over, :] = psi[-1, :][None, :] + (p[over] - hi)[:, None]
        under = p < lo
        if under.any():
            v[under, :] = psi[0, :][None, :] - (p[under] - lo)[:, None]
        stack[i] = v
    interp1 = CubicSpline(x, stack, axis=2, bc_type="natural")
    if m < 1e-14:
        acc = np.zeros((nx, nx))
    else:
        run_max = np.full((nx, nx), -np.inf)
        run_sum = np.zeros((nx, nx))
    for j in range(nz):
        p = pts[j]
        vj = interp1(np.clip(p, lo, hi))  # (nz, nx, nx_eval)
        over = p > hi
        if over.any():
            vj[:, :, over] = stack[:, :, -1][:, :, None] + (p[over] - hi)[None, None, :]
        under = p < lo
        if under.any():
            vj[:, :, under] = stack[:, :, 0][:, :, None] - (p[under] - lo)[None, None, :]
        if m < 1e-14:
            acc += w[j] * np.einsum("i,ixy->xy", w, vj)
        else:
            vm = m * vj
            cj = vm.max(axis=0)
            sj = np.einsum("i,ixy->xy", w, np.exp(vm - cj[None, :, :]))
            new_max = np.maximum(run_max, cj)
            run_sum = run_sum * np.exp(run_max - new_max) + w[j] * sj * np.exp(cj - new_max)
            run_max = new_max
    if m < 1e-14:
        return acc
    return (run_max + np.log(run_sum)) / m


def solve_coupled(
    spec: MixingSpec,
    measure: DiscreteMeasure,
    lam: float,
    grid: XGrid | None = None,
    gh_nodes: int = COUPLED_GH_NODES,
    extra_layers=(),
) -> CoupledSolution:
    """Two-variable backward recursion with independent equal-variance smears.

    Terminal data couples the replicas through the tilt lambda; at lambda = 0
    the solution separates into the sum of two one-replica solutions.
    """
    if abs(lam) > 2.0:
        raise ValueError("|lambda| <= 2 supported (grid sized accordingly)")
    grid = grid or COUPLED_GRID
    x = grid.nodes
    if len(x) ** 2 > _MAX_COUPLED_NODES:
        raise MemoryError("2D grid too large; coarsen spacing or shrink half_width")
    z, w = gauss_hermite(gh_nodes)
    layers = measure.layer_points(extra=extra_layers)
    m_vals = _interval_m_values(measure, layers)
    bps = _true_breakpoints(layers, m_vals)

    def step(psi, m, q_hi, q_lo):
        a2 = spec.xi_prime(q_hi) - spec.xi_prime(q_lo)
        if a2 <= 1e-15:
            return psi.copy()
        out = _coupled_segment_step(psi, m, math.sqrt(a2), x, z, w)
        if not np.all(np.isfinite(out)):
            raise ArithmeticError("non-finite values in the coupled recursion")
        return out

    states: list = [None] * len(layers)
    states[-1] = coupled_boundary(lam, x[:, None], x[None, :])
    for bi in range(len(bps) - 1, 0, -1):
        hi, lo = bps[bi], bps[bi - 1]
        m = m_vals[lo]
        for j in range(hi - 1, lo, -1):
            states[j] = step(states[hi], m, layers[hi], layers[j])
        states[lo] = step(states[hi], m, layers[hi], layers[lo])
    return CoupledSolution(
        spec=spec,
        measure=measure,
        lam=lam,
        grid=grid,
        gh_nodes=gh_nodes,
        layer_q=layers,
        psi=np.asarray(states),
    )


def guerra_bound(
    spec: MixingSpec,
    measure: DiscreteMeasure,
    lam: float,
    t: float,
    sign: int,
    solution: CoupledSolution | None = None,
    grid: XGrid | None = None,
    gh_nodes: int = COUPLED_GH_NODES,
    field_nodes: int = 24,
) -> float:
    """Upper bound on the tilted coupled free energy at this order parameter.

    2 log 2 + E Psi(sign*lam, 0, h1, h2) - int xi''(q) q mu([0,q]) dq, where
    (h1, h2) share the sqrt(t) component of their Gaussian field part.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if not 0.0 < t < 1.0:
        raise ValueError("t must lie in (0, 1)")
    if solution is None:
        solution = solve_coupled(spec, measure, sign * lam, grid=grid, gh_nodes=gh_nodes)
    if spec.beta1 == 0.0:
        e_psi = float(solution.psi_at(0.0, [spec.h], [spec.h])[0, 0])
    else:
        z, w = gauss_hermite(field_nodes)
        rt, rt1 = math.sqrt(t), math.sqrt(1.0 - t)
        e_psi = 0.0
        for zk, wk in zip(z, w):
            shift = spec.h + spec.beta1 * rt * zk
            pts = shift + spec.beta1 * rt1 * z
            vals = solution.psi_at(0.0, pts, pts)
            e_psi += wk * float(w @ vals @ w)
    return 2.0 * LOG2 + e_psi - measure_penalty(spec, measure)


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------

def pde_residual(
    spec: MixingSpec,
    solution: ParisiSolution,
    core_fraction: float = 0.5,
) -> float:
    """Max finite-difference residual of the evolution equation on the core.

    Checks d_q Phi + (xi''/2)(d_xx Phi + m (d_x Phi)^2) = 0 at interior layers
    of a dense equally-spaced solve: d_q Phi by centered differences of the
    phi layers, d_x Phi from the stored derivative layers, and d_xx Phi by
    centered differences of those (the derivative layers are propagated
    analytically, so they carry no grid-scale interpolation wiggle).
    """
    q = solution.layer_q
    x = solution.grid.nodes
    dx = solution.grid.spacing
    core = np.abs(x) <= core_fraction * solution.grid.half_width
    worst = 0.0
    for j in range(1, len(q) - 1):
        dq_minus = q[j] - q[j - 1]
        dq_plus = q[j + 1] - q[j]
        if abs(dq_plus - dq_minus) > 1e-12:
            continue  # only centered, equal-spacing layers
        m = solution.measure.value_at(0.5 * (q[j] + q[j + 1]))
        m_lo = solution.measure.value_at(0.5 * (q[j - 1] + q[j]))
        if m_lo != m:
            continue  # skip layers where the CDF jumps
        phi_q = (solution.phi[j + 1] - solution.phi[j - 1]) / (dq_plus + dq_minus)
        dphi = solution.dphi[j]
        phi_xx = (dphi[2:] - dphi[:-2]) / (2 * dx)
        phi_x = dphi[1:-1]
        resid = phi_q[1:-1] + 0.5 * spec.xi_second(q[j]) * (phi_xx + m * phi_x ** 2)
        worst = max(worst, float(np.max(np.abs(resid[core[1:-1]]))))
    return worst
