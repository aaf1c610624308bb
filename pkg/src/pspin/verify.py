"""Monte Carlo experiments confronting analytic constants with exact finite-N runs.

All experiments draw disorder in fixed-size chunks (size a function of N only)
with one counter-based stream per chunk, write per-replica results into
index-addressed slots, and reduce in a fixed order; results are therefore
bit-identical for any thread count.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtr

from . import gibbs, kernels, rng
from .errors import ScopeError
from .model import MixingSpec, validate_for_clt

_CHUNK_TARGET = 1 << 22  # elements per (chunk, 2^n) work array


def _chunk_size(n: int) -> int:
    return max(1, min(4096, _CHUNK_TARGET >> n))


def _chunks(M: int, n: int):
    B = _chunk_size(n)
    return [(i, lo, min(lo + B, M)) for i, lo in enumerate(range(0, M, B))]


def _run_chunks(work, chunks, threads: int) -> None:
    if threads <= 1:
        for c in chunks:
            work(*c)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda c: work(*c), chunks))


# --------------------------------------------------------------------------
# result containers
# --------------------------------------------------------------------------

@dataclass
class SampleSet:
    """Per-replica statistics of one experiment, regenerable from its seed."""

    spec: MixingSpec
    n: int
    M: int
    values: np.ndarray
    seed: int
    elapsed: float = 0.0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("need at least two replicas")
        if not np.all(np.isfinite(self.values)):
            raise ArithmeticError("non-finite sample values")


@dataclass
class StatReport:
    """Point estimates with standard errors and declared-tolerance flags."""

    name: str
    estimates: dict = field(default_factory=dict)
    standard_errors: dict = field(default_factory=dict)
    statistics: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = set(self.estimates) - set(self.standard_errors)
        if missing:
            raise ValueError(f"estimates without standard errors: {sorted(missing)}")

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def jackknife_variance_se(x: np.ndarray) -> float:
    """Delete-one jackknife standard error of the (ddof=1) sample variance."""
    M = len(x)
    if M < 3:
        return float("nan")
    s1 = x.sum() - x
    s2 = (x ** 2).sum() - x ** 2
    var_loo = (s2 - s1 ** 2 / (M - 1)) / (M - 2)
    return math.sqrt((M - 1) / M * ((var_loo - var_loo.mean()) ** 2).sum())


# --------------------------------------------------------------------------
# batched samplers
# --------------------------------------------------------------------------

def _batch_tables_single(spec: MixingSpec, n: int, gen, B: int) -> np.ndarray:
    tensors, fld = gibbs.draw_tensors(spec, n, gen, B)
    C = gibbs.batch_interaction_coeffs(spec, n, tensors, batch_size=B)
    C += gibbs.batch_field_part_coeffs(spec, n, fld)
    C += gibbs.external_field_coeffs(spec, n)[None, :]
    return kernels.fwht(C)


def sample_free_energies(
    spec: MixingSpec, n: int, M: int, seed: int, stream: int = rng.STREAM_VARIANCE,
    threads: int = 1,
) -> np.ndarray:
    """f_N for M disorder replicas by exact enumeration."""
    gibbs._require_cap(spec, n)
    out = np.empty(M)

    def work(ci, lo, hi):
        gen = rng.generator_for(seed, stream, ci)
        E = _batch_tables_single(spec, n, gen, hi - lo)
        out[lo:hi] = logsumexp(E, axis=1)

    _run_chunks(work, _chunks(M, n), threads)
    return out


class _CoupledBatch:
    """Coefficient vectors of one chunk of coupled draws (shared + 2 copies)."""

    def __init__(self, spec: MixingSpec, n: int, gen, B: int):
        self.spec, self.n, self.B = spec, n, B
        parts = []
        for _ in range(3):
            tensors, fld = gibbs.draw_tensors(spec, n, gen, B)
            cx = gibbs.batch_interaction_coeffs(spec, n, tensors, batch_size=B)
            cz = gibbs.batch_field_part_coeffs(spec, n, fld)
            parts.append((cx, cz))
        (self.cx_sh, self.cz_sh), (self.cx1, self.cz1), (self.cx2, self.cz2) = parts
        self.ch = gibbs.external_field_coeffs(spec, n)[None, :]

    def tables_ts(self, t: float, s: float):
        """Energy tables of both systems at interaction time s, field time t."""
        rs, rs1 = math.sqrt(s), math.sqrt(1.0 - s)
        rt, rt1 = math.sqrt(t), math.sqrt(1.0 - t)
        e1 = kernels.fwht(
            rs * self.cx_sh + rs1 * self.cx1 + rt * self.cz_sh + rt1 * self.cz1 + self.ch
        )
        e2 = kernels.fwht(
            rs * self.cx_sh + rs1 * self.cx2 + rt * self.cz_sh + rt1 * self.cz2 + self.ch
        )
        return e1, e2


def _normalized_weights(E: np.ndarray) -> np.ndarray:
    return np.exp(E - logsumexp(E, axis=1, keepdims=True))


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

def estimate_variance(
    spec: MixingSpec, n: int, M: int, seed: int, threads: int = 1,
    lower_edge: float | None = None,
) -> StatReport:
    """Sample mean/variance of f_N with jackknife errors and the gradient bound.

    The Poincare upper bound is Var(f_N) <= N xi(1): the squared gradient of
    f_N in all coupling Gaussians is sum_p beta_p^2 N^{1-p} sum <sigma...>^2
    <= N xi(1).  lower_edge (if given) is checked as Var/N >= lower_edge.
    """
    t0 = time.time()
    f = sample_free_energies(spec, n, M, seed, stream=rng.STREAM_VARIANCE, threads=threads)
    mean = float(f.mean())
    se_mean = float(f.std(ddof=1) / math.sqrt(M))
    var = float(f.var(ddof=1))
    se_var = jackknife_variance_se(f)
    rel = se_var / var if var > 0 else 0.0
    bound = n * spec.xi(1.0)
    # rounding floor: a nonrandom f still shows O((eps |f|)^2) sample variance
    noise_floor = (1e-12 * (1.0 + abs(mean))) ** 2
    checks = {"poincare_upper": var <= bound * (1.0 + 3.0 * rel) + noise_floor}
    if lower_edge is not None:
        checks["above_lower_edge"] = var / n >= lower_edge
    return StatReport(
        name="variance",
        estimates={"mean_f": mean, "var_f": var, "var_per_site": var / n},
        standard_errors={"mean_f": se_mean, "var_f": se_var, "var_per_site": se_var / n},
        statistics={"poincare_bound_per_site": spec.xi(1.0), "elapsed": time.time() - t0},
        checks=checks,
    )


def composite_weights(t_nodes: np.ndarray) -> np.ndarray:
    """Composite quadrature weights on [0,1] for the given nodes.

    Simpson for uniformly spaced nodes with an odd count spanning [0,1],
    trapezoid otherwise.
    """
    t = np.asarray(t_nodes, float)
    if len(t) < 2:
        raise ValueError("need at least two nodes")
    h = np.diff(t)
    uniform = np.allclose(h, h[0], rtol=0, atol=1e-12)
    if uniform and len(t) % 2 == 1 and abs(t[0]) < 1e-12 and abs(t[-1] - 1) < 1e-12:
        w = np.ones(len(t))
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return w * h[0] / 3.0
    w = np.zeros(len(t))
    w[:-1] += h / 2.0
    w[1:] += h / 2.0
    return w


def variance_curve(
    spec: MixingSpec, n: int, M: int, t_nodes, seed: int, threads: int = 1,
) -> StatReport:
    """The interpolation curve t -> E<xi(R)>_t and the variance identity.

    Uses common random numbers across t (the same coupled draws), the exact
    per-overlap histogram per replica, and an independent substream of the
    same master seed for the Var(f_N) side.  Checks the identity
    Var(f_N) = N int_0^1 E<xi(R)>_t dt at 3 combined standard errors and the
    nonnegativity/monotonicity of the curve at 2 s.e.
    """
    t0 = time.time()
    t_nodes = np.asarray(t_nodes, float)
    if len(t_nodes) < 5:
        raise ValueError("need at least 5 t-nodes")
    if np.any(t_nodes < 0) or np.any(t_nodes > 1):
        raise ValueError("t-nodes must lie in [0, 1]")
    gibbs._require_cap(spec, n)
    levels = kernels.overlap_levels(n)
    xi_levels = spec.xi(levels)
    curve_vals = np.empty((M, len(t_nodes)))

    def work(ci, lo, hi):
        gen = rng.generator_for(seed, rng.STREAM_CURVE, ci)
        batch = _CoupledBatch(spec, n, gen, hi - lo)
        for j, t in enumerate(t_nodes):
            e1, e2 = batch.tables_ts(t, t)
            masses = kernels.overlap_masses(
                _normalized_weights(e1), _normalized_weights(e2), n
            )
            curve_vals[lo:hi, j] = masses @ xi_levels

    _run_chunks(work, _chunks(M, n), threads)

    curve_mean = curve_vals.mean(axis=0)
    curve_se = curve_vals.std(axis=0, ddof=1) / math.sqrt(M)
    qw = composite_weights(t_nodes)
    integrals = curve_vals @ qw
    integral = float(integrals.mean())
    se_integral = float(integrals.std(ddof=1) / math.sqrt(M))

    f = sample_free_energies(spec, n, M, seed, stream=rng.STREAM_CURVE_VAR, threads=threads)
    var = float(f.var(ddof=1))
    se_var = jackknife_variance_se(f)

    gap = abs(var - n * integral)
    se_gap = math.sqrt(se_var ** 2 + (n * se_integral) ** 2)
    diffs = np.diff(curve_vals, axis=1)
    diff_mean = diffs.mean(axis=0)
    diff_se = diffs.std(axis=0, ddof=1) / math.sqrt(M)

    checks = {
        "identity_3se": gap <= 3.0 * se_gap,
        "nonnegative_2se": bool(np.all(curve_mean >= -2.0 * curve_se)),
        "nondecreasing_2se": bool(np.all(diff_mean >= -2.0 * diff_se)),
    }
    return StatReport(
        name="variance_curve",
        estimates={"var_f": var, "n_times_integral": n * integral},
        standard_errors={"var_f": se_var, "n_times_integral": n * se_integral},
        statistics={"identity_gap": gap, "identity_gap_se": se_gap, "elapsed": time.time() - t0},
        checks=checks,
        curves={"t": t_nodes, "mean_xiR": curve_mean, "se": curve_se},
    )


def chaos_check(
    spec: MixingSpec, n: int, M: int, t: float, center: float, epsilon: float,
    seed: int, mode: str = "t", threads: int = 1,
) -> StatReport:
    """Tail mass E<1{|R - center| >= eps}> under the coupled product measure.

    mode "t" is the correlated-system average <.>_t (even-only specs only);
    mode "ts0" freezes the field interpolation at t and decouples the
    interactions (s = 0), which is valid for general mixtures.
    """
    if mode not in ("t", "ts0"):
        raise ValueError("mode must be 't' or 'ts0'")
    if mode == "t" and not spec.even_only:
        raise ScopeError("the correlated-system concentration statement needs an even-only spec")
    if not 0.0 < t < 1.0:
        raise ValueError("t must lie in (0, 1)")
    gibbs._require_cap(spec, n)
    t0 = time.time()
    levels = kernels.overlap_levels(n)
    sel = np.abs(levels - center) >= epsilon
    tails = np.empty(M)

    def work(ci, lo, hi):
        gen = rng.generator_for(seed, rng.STREAM_CHAOS, ci)
        batch = _CoupledBatch(spec, n, gen, hi - lo)
        s = t if mode == "t" else 0.0
        e1, e2 = batch.tables_ts(t, s)
        masses = kernels.overlap_masses(
            _normalized_weights(e1), _normalized_weights(e2), n
        )
        tails[lo:hi] = masses[:, sel].sum(axis=1)

    _run_chunks(work, _chunks(M, n), threads)
    est = float(tails.mean())
    se = float(tails.std(ddof=1) / math.sqrt(M))
    return StatReport(
        name=f"chaos_{mode}",
        estimates={"tail_mass": est},
        standard_errors={"tail_mass": se},
        statistics={"center": center, "epsilon": epsilon, "t": t, "n": n,
                    "elapsed": time.time() - t0},
    )


def clt_samples(
    spec: MixingSpec, n: int, M: int, nu: float, seed: int, threads: int = 1,
) -> SampleSet:
    """W = (f_N - sample mean)/sqrt(nu N) over M replicas.

    The exact E f_N is unavailable in closed form, so the sample mean centers
    the statistic; the induced O(M^{-1/2}) bias is below the statistical noise
    of the downstream tests.
    """
    report = validate_for_clt(spec)
    if not report.ok:
        raise ScopeError("; ".join(report.messages))
    if nu <= 0:
        raise ValueError("nu must be positive")
    t0 = time.time()
    f = sample_free_energies(spec, n, M, seed, stream=rng.STREAM_CLT, threads=threads)
    w = (f - f.mean()) / math.sqrt(nu * n)
    return SampleSet(spec=spec, n=n, M=M, values=w, seed=seed, elapsed=time.time() - t0)


def ks_statistic(samples) -> tuple:
    """(sup |empirical CDF - standard normal CDF|, 1% threshold 1.63/sqrt(M))."""
    values = samples.values if isinstance(samples, SampleSet) else np.asarray(samples)
    M = len(values)
    if M < 100:
        raise ValueError("need at least 100 samples")
    x = np.sort(values)
    cdf = ndtr(x)
    i = np.arange(1, M + 1)
    D = float(np.max(np.maximum(i / M - cdf, cdf - (i - 1) / M)))
    return D, 1.63 / math.sqrt(M)


def _stein_family():
    """(name, psi, psi') pairs with ||psi'||_inf <= 2."""
    family = []
    for a in np.linspace(-2.0, 2.0, 9):
        family.append(
            (
                f"2tanh(w-{a:+.1f})",
                lambda w, a=a: 2.0 * np.tanh(w - a),
                lambda w, a=a: 2.0 / np.cosh(w - a) ** 2,
            )
        )
    family.append(
        (
            "clip(w,-4,4)",
            lambda w: np.clip(w, -4.0, 4.0),
            lambda w: (np.abs(w) < 4.0).astype(float),
        )
    )
    return family


def stein_discrepancy(
    samples, bootstrap: int = 200, bootstrap_seed: int = 0,
) -> StatReport:
    """max over the fixed test family of |E W psi(W) - E psi'(W)|.

    Gaussian samples satisfy every identity exactly, so each discrepancy is
    O(M^{-1/2}); bootstrap standard errors calibrate the 3 s.e. pass flags.
    """
    values = samples.values if isinstance(samples, SampleSet) else np.asarray(samples)
    M = len(values)
    if M < 100:
        raise ValueError("need at least 100 samples")
    gen = rng.generator_for(bootstrap_seed, rng.STREAM_BOOTSTRAP, 0)
    idx = gen.integers(0, M, size=(bootstrap, M))
    names, discs, ses, flags = [], [], [], {}
    for name, psi, dpsi in _stein_family():
        g = values * psi(values) - dpsi(values)
        disc = abs(float(g.mean()))
        boot = np.abs(g[idx].mean(axis=1))
        se = float(g.std(ddof=1) / math.sqrt(M))
        se = max(se, float(boot.std(ddof=1)))
        names.append(name)
        discs.append(disc)
        ses.append(se)
        flags[f"pass_{name}"] = disc <= 3.0 * se
    worst = int(np.argmax(discs))
    return StatReport(
        name="stein",
        estimates={"max_discrepancy": discs[worst]},
        standard_errors={"max_discrepancy": ses[worst]},
        statistics={"worst_psi": worst, "M": M},
        checks=flags,
        curves={
            "psi": np.array(names, dtype=object),
            "discrepancy": np.array(discs),
            "se": np.array(ses),
        },
    )


def guerra_check(
    spec: MixingSpec,
    measure,
    n: int,
    M: int,
    lam: float,
    t: float,
    seed: int,
    threads: int = 1,
    bounds: dict | None = None,
    grid2=None,
) -> StatReport:
    """Enumeration estimate of the tilted coupled free energies vs the bound.

    Estimates (1/N) E log sum exp(H^1(sigma) + H^2(tau) +- lambda N R) with
    the field parts correlated at t and independent interactions, then asserts
    estimate <= bound + 3 s.e. for both tilt signs.
    """
    from . import parisi as parisi_mod

    if not spec.even_only:
        raise ScopeError("the coupled bound requires an even-only spec")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    gibbs._require_cap(spec, n)
    t0 = time.time()
    levels = kernels.overlap_levels(n)
    vals = {+1: np.empty(M), -1: np.empty(M)}
    tilt = {sgn: np.exp(sgn * lam * n * levels) for sgn in (+1, -1)}

    def work(ci, lo, hi):
        gen = rng.generator_for(seed, rng.STREAM_GUERRA, ci)
        batch = _CoupledBatch(spec, n, gen, hi - lo)
        e1, e2 = batch.tables_ts(t, 0.0)
        m1 = e1.max(axis=1, keepdims=True)
        m2 = e2.max(axis=1, keepdims=True)
        corr = kernels.xor_correlation(np.exp(e1 - m1), np.exp(e2 - m2))
        per_level = kernels.popcount_hist(corr, n)
        np.clip(per_level, 0.0, None, out=per_level)
        for sgn in (+1, -1):
            total = per_level @ tilt[sgn]
            vals[sgn][lo:hi] = (m1[:, 0] + m2[:, 0] + np.log(total)) / n

    _run_chunks(work, _chunks(M, n), threads)

    if bounds is None:
        bounds = {
            sgn: parisi_mod.guerra_bound(spec, measure, lam, t, sgn, grid=grid2)
            for sgn in (+1, -1)
        }
    estimates, ses, checks, stats = {}, {}, {}, {"lambda": lam, "t": t, "n": n}
    for sgn, tag in ((+1, "plus"), (-1, "minus")):
        est = float(vals[sgn].mean())
        se = float(vals[sgn].std(ddof=1) / math.sqrt(M))
        estimates[f"coupled_free_energy_{tag}"] = est
        ses[f"coupled_free_energy_{tag}"] = se
        stats[f"bound_{tag}"] = bounds[sgn]
        checks[f"bounded_{tag}"] = est <= bounds[sgn] + 3.0 * se
    stats["elapsed"] = time.time() - t0
    return StatReport(
        name="guerra",
        estimates=estimates,
        standard_errors=ses,
        statistics=stats,
        checks=checks,
    )
