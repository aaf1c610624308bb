"""Command-line driver: seeded, config-driven runs with persisted results.

Exit codes: 0 success, 1 invalid config or theorem-scope violation,
2 numerical non-convergence, 3 a --check assertion failed.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import cltvar, gibbs, parisi, verify
from .config import ConfigError, RunConfig, load_config
from .errors import NonConvergenceError, ScopeError
from .model import validate_for_clt
from .output import fmt, version_string, write_csv, write_json, write_svg_polyline

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NONCONVERGENCE = 2
EXIT_CHECK_FAILED = 3


def _meta(cfg: RunConfig) -> dict:
    return {
        "version": version_string(),
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
    }


def _emit_resolved_config(cfg: RunConfig) -> None:
    write_json(os.path.join(cfg.out, "resolved_config.json"), {"config": cfg.semantic}, _meta(cfg))


class _Pipeline:
    """Lazily computed measure / solution / constants shared by a command."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self._opt = None
        self._solution = None
        self._constants = None
        self.nonconverged = False

    def measure(self):
        if self.cfg.measure is not None:
            return self.cfg.measure
        if self._opt is None:
            self._opt = parisi.optimize_measure(
                self.cfg.spec, k_max=self.cfg.k_max, tol=self.cfg.tol,
                grid=self.cfg.grid, gh_nodes=self.cfg.gh_nodes,
            )
            if not self._opt.converged:
                self.nonconverged = True
        return self._opt.measure

    @property
    def optimizer(self):
        return self._opt

    def solution(self):
        if self._solution is None:
            self._solution = parisi.solve_parisi(
                self.cfg.spec, self.measure(), grid=self.cfg.grid, gh_nodes=self.cfg.gh_nodes
            )
        return self._solution

    def constants(self):
        if self._constants is None:
            n_nodes = int(self.cfg.experiment.get("u_nodes", 32))
            self._constants = cltvar.compute_constants(
                self.cfg.spec, measure=self.measure(), grid=self.cfg.grid,
                gh_nodes=self.cfg.gh_nodes, n_nodes=n_nodes,
            )
        return self._constants


def _maybe_svg(cfg: RunConfig, enabled: bool, name: str, xs, ys, title: str) -> None:
    if enabled and len(xs) > 1:
        write_svg_polyline(os.path.join(cfg.out, name), xs, ys, title=title)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_parisi(cfg: RunConfig, args) -> tuple:
    pipe = _Pipeline(cfg)
    optimize = args.optimize or cfg.experiment.get("optimize", False)
    if not optimize and cfg.measure is None:
        raise ConfigError("parisi needs measure.atoms/cdf in the config, or --optimize")
    measure = pipe.measure() if optimize else cfg.measure
    sol = parisi.solve_parisi(cfg.spec, measure, grid=cfg.grid, gh_nodes=cfg.gh_nodes)
    rows = []
    x = sol.grid.nodes
    for j, q in enumerate(sol.layer_q):
        for i in range(len(x)):
            rows.append((q, x[i], sol.phi[j, i], sol.dphi[j, i]))
    write_csv(os.path.join(cfg.out, "phi.csv"), ["q_layer", "x", "phi", "dphi"], rows, _meta(cfg))
    value = parisi.parisi_functional(cfg.spec, measure, grid=cfg.grid,
                                     gh_nodes=cfg.gh_nodes, solution=sol)
    payload = {
        "measure": {"atoms": list(measure.atoms), "cdf": list(measure.cdf)},
        "functional_value": value,
        "optimized": bool(optimize),
    }
    if pipe.optimizer is not None:
        payload["optimizer"] = {
            "k": pipe.optimizer.k,
            "values_by_k": pipe.optimizer.values_by_k,
            "converged": pipe.optimizer.converged,
        }
    write_json(os.path.join(cfg.out, "measure.json"), payload, _meta(cfg))
    checks = {
        "terminal_boundary": float(np.max(np.abs(sol.phi[-1] - parisi.logcosh(x)))) <= 1e-12,
        "phi_even": float(np.max(np.abs(sol.phi - sol.phi[:, ::-1]))) <= 1e-10,
        "dphi_bounded": float(np.max(np.abs(sol.dphi))) <= 1.0 + 1e-12,
        "dphi_nondecreasing": bool(np.all(np.diff(sol.dphi, axis=1) >= -1e-12)),
    }
    return checks, pipe.nonconverged


def cmd_constants(cfg: RunConfig, args) -> tuple:
    scope = validate_for_clt(cfg.spec)
    if not scope.ok:
        raise ScopeError("; ".join(scope.messages))
    pipe = _Pipeline(cfg)
    const = pipe.constants()
    xi_u = cfg.spec.xi(const.u_values)
    write_csv(
        os.path.join(cfg.out, "u_curve.csv"),
        ["t", "u_t", "xi_u_t"],
        list(zip(const.t_nodes, const.u_values, xi_u)),
        _meta(cfg),
    )
    payload = {
        "d": const.d,
        "nu": const.nu,
        "measure": {"atoms": list(const.measure.atoms), "cdf": list(const.measure.cdf)},
        "diagnostics": const.diagnostics,
    }
    write_json(os.path.join(cfg.out, "constants.json"), payload, _meta(cfg))
    _maybe_svg(cfg, args.svg, "u_curve.svg", const.t_nodes, const.u_values, "t -> u_t")
    checks = {
        "u1_equals_d": abs(const.diagnostics["u1"] - const.d) <= 1e-6,
        "nu_positive": const.nu > 0,
        "d_fixed_point_residual": const.diagnostics["d_residual"] <= 1e-3,
        "u_in_range": bool(
            np.all(const.u_values >= 0) and np.all(const.u_values <= const.d + 1e-9)
        ),
    }
    return checks, pipe.nonconverged


def cmd_variance(cfg: RunConfig, args) -> tuple:
    exp = cfg.experiment
    n_values = exp.get("n_values") or [exp.get("n", 8)]
    M = int(exp.get("M", 1000))
    lower = exp.get("lower_edge")
    pipe = _Pipeline(cfg)
    if lower == "auto":
        scope = validate_for_clt(cfg.spec)
        if not scope.ok:
            raise ScopeError("lower_edge auto needs the CLT constants: " + "; ".join(scope.messages))
        lower = pipe.constants().nu / 2.0
    rows, checks = [], {}
    for n in n_values:
        rep = verify.estimate_variance(
            cfg.spec, int(n), M, cfg.seed, threads=cfg.threads, lower_edge=lower
        )
        rows.append(
            (
                n,
                rep.estimates["mean_f"],
                rep.standard_errors["mean_f"],
                rep.estimates["var_f"],
                rep.standard_errors["var_f"],
                rep.estimates["var_per_site"],
                rep.statistics["poincare_bound_per_site"],
            )
        )
        for k, v in rep.checks.items():
            checks[f"n{n}_{k}"] = v
    header = ["n", "mean_f", "se_mean", "var_f", "se_var", "var_per_site", "poincare_bound_per_site"]
    write_csv(os.path.join(cfg.out, "variance.csv"), header, rows, _meta(cfg))
    write_json(os.path.join(cfg.out, "variance.json"),
               {"checks": checks, "M": M, "lower_edge": lower}, _meta(cfg))
    _maybe_svg(cfg, args.svg, "variance.svg",
               [r[0] for r in rows], [r[5] for r in rows], "n -> Var(f)/n")
    return checks, pipe.nonconverged


def _resolve_t_nodes(exp: dict):
    t_nodes = exp.get("t_nodes", 21)
    if isinstance(t_nodes, int):
        return np.linspace(0.0, 1.0, t_nodes)
    return np.asarray(t_nodes, float)


def cmd_lemma2(cfg: RunConfig, args) -> tuple:
    exp = cfg.experiment
    n = int(exp.get("n", 2))
    M = int(exp.get("M", 10000))
    t_nodes = _resolve_t_nodes(exp)
    rep = verify.variance_curve(cfg.spec, n, M, t_nodes, cfg.seed, threads=cfg.threads)
    write_csv(
        os.path.join(cfg.out, "lemma2.csv"),
        ["t", "mean_xiR", "se"],
        list(zip(rep.curves["t"], rep.curves["mean_xiR"], rep.curves["se"])),
        _meta(cfg),
    )
    write_json(
        os.path.join(cfg.out, "lemma2.json"),
        {
            "estimates": rep.estimates,
            "standard_errors": rep.standard_errors,
            "statistics": {k: v for k, v in rep.statistics.items() if k != "elapsed"},
            "checks": rep.checks,
            "n": n,
            "M": M,
        },
        _meta(cfg),
    )
    _maybe_svg(cfg, args.svg, "lemma2.svg", rep.curves["t"], rep.curves["mean_xiR"],
               "t -> E<xi(R)>_t")
    return rep.checks, False


def cmd_chaos(cfg: RunConfig, args) -> tuple:
    exp = cfg.experiment
    mode = exp.get("mode", "t")
    n_values = exp.get("n_values") or [exp.get("n", 8)]
    M = int(exp.get("M", 1000))
    t = float(exp.get("t", 0.5))
    epsilon = float(exp.get("epsilon", 0.1))
    center = exp.get("center", "auto")
    pipe = _Pipeline(cfg)
    if mode == "t" and not cfg.spec.even_only:
        raise ScopeError("chaos mode 't' needs an even-only spec")
    if center == "auto":
        sol = pipe.solution()
        d = cltvar.extract_d(pipe.measure())
        if mode == "t":
            center = cltvar.solve_u(sol, d, t, gh_nodes=cfg.gh_nodes)
        else:
            center = cltvar.compute_u_prop1(sol, t, gh_nodes=cfg.gh_nodes)
    center = float(center)
    rows = []
    estimates = []
    for n in n_values:
        rep = verify.chaos_check(
            cfg.spec, int(n), M, t, center, epsilon, cfg.seed, mode=mode, threads=cfg.threads
        )
        rows.append((n, rep.estimates["tail_mass"], rep.standard_errors["tail_mass"]))
        estimates.append((rep.estimates["tail_mass"], rep.standard_errors["tail_mass"]))
    write_csv(os.path.join(cfg.out, "chaos.csv"), ["n", "tail_mass", "se"], rows, _meta(cfg))
    checks = {}
    for i in range(1, len(estimates)):
        (e0, s0), (e1, s1) = estimates[i - 1], estimates[i]
        checks[f"decreasing_{n_values[i - 1]}_to_{n_values[i]}_2se"] = (
            e1 <= e0 + 2.0 * (s0 ** 2 + s1 ** 2) ** 0.5
        )
    write_json(
        os.path.join(cfg.out, "chaos.json"),
        {"mode": mode, "center": center, "epsilon": epsilon, "t": t, "M": M, "checks": checks},
        _meta(cfg),
    )
    _maybe_svg(cfg, args.svg, "chaos.svg", [r[0] for r in rows], [r[1] for r in rows],
               f"n -> tail mass (mode {mode})")
    return checks, pipe.nonconverged


def cmd_clt(cfg: RunConfig, args) -> tuple:
    exp = cfg.experiment
    scope = validate_for_clt(cfg.spec)
    if not scope.ok:
        raise ScopeError("; ".join(scope.messages))
    n = int(exp.get("n", 8))
    M = int(exp.get("M", 1000))
    nu = exp.get("nu", "auto")
    pipe = _Pipeline(cfg)
    if nu == "auto":
        nu = pipe.constants().nu
    nu = float(nu)
    samples = verify.clt_samples(cfg.spec, n, M, nu, cfg.seed, threads=cfg.threads)
    D, threshold = verify.ks_statistic(samples)
    stein = verify.stein_discrepancy(samples, bootstrap=int(exp.get("bootstrap", 200)),
                                     bootstrap_seed=cfg.seed)
    write_csv(os.path.join(cfg.out, "clt.csv"), ["w"], [(v,) for v in samples.values], _meta(cfg))
    checks = {"ks_below_threshold": D <= threshold, "stein_battery": stein.passed}
    write_json(
        os.path.join(cfg.out, "clt.json"),
        {
            "n": n,
            "M": M,
            "nu": nu,
            "ks": {"D": D, "threshold_1pct": threshold},
            "stein": {
                "psi": list(stein.curves["psi"]),
                "discrepancy": stein.curves["discrepancy"],
                "se": stein.curves["se"],
                "max": stein.estimates["max_discrepancy"],
            },
            "checks": checks,
        },
        _meta(cfg),
    )
    return checks, pipe.nonconverged


def cmd_guerra(cfg: RunConfig, args) -> tuple:
    exp = cfg.experiment
    if not cfg.spec.even_only:
        raise ScopeError("the coupled bound requires an even-only spec")
    n = int(exp.get("n", 10))
    M = int(exp.get("M", 1000))
    t = float(exp.get("t", 0.5))
    lambdas = exp.get("lambdas", [0.0, 0.1, 0.3])
    grid2_cfg = exp.get("grid2", {})
    grid2 = parisi.XGrid(
        half_width=float(grid2_cfg.get("L", parisi.COUPLED_GRID.half_width)),
        spacing=float(grid2_cfg.get("delta", parisi.COUPLED_GRID.spacing)),
    )
    gh2 = int(grid2_cfg.get("gh_nodes", parisi.COUPLED_GH_NODES))
    pipe = _Pipeline(cfg)
    measure = pipe.measure()
    rows, checks = [], {}
    for lam in lambdas:
        bounds = {
            sgn: parisi.guerra_bound(cfg.spec, measure, float(lam), t, sgn,
                                     grid=grid2, gh_nodes=gh2)
            for sgn in (+1, -1)
        }
        rep = verify.guerra_check(cfg.spec, measure, n, M, float(lam), t, cfg.seed,
                                  threads=cfg.threads, bounds=bounds)
        for sgn, tag in ((+1, "plus"), (-1, "minus")):
            rows.append(
                (
                    lam,
                    "+" if sgn > 0 else "-",
                    rep.estimates[f"coupled_free_energy_{tag}"],
                    rep.standard_errors[f"coupled_free_energy_{tag}"],
                    bounds[sgn],
                )
            )
            checks[f"lam{fmt(float(lam))}_{tag}"] = rep.checks[f"bounded_{tag}"]
    write_csv(os.path.join(cfg.out, "guerra.csv"),
              ["lambda", "sign", "estimate", "se", "bound"], rows, _meta(cfg))
    write_json(os.path.join(cfg.out, "guerra.json"),
               {"n": n, "M": M, "t": t, "checks": checks}, _meta(cfg))
    return checks, pipe.nonconverged


_COMMANDS = {
    "parisi": cmd_parisi,
    "constants": cmd_constants,
    "variance": cmd_variance,
    "lemma2": cmd_lemma2,
    "chaos": cmd_chaos,
    "clt": cmd_clt,
    "guerra": cmd_guerra,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pspin",
        description="Fluctuation constants and desk-scale checks for mixed p-spin free energies",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--threads", type=int, default=None, help="override worker count")
        p.add_argument("--check", action="store_true", help="exit 3 if any declared check fails")
        p.add_argument("--svg", action="store_true", help="emit polyline plots of produced curves")
        if name == "parisi":
            p.add_argument("--optimize", action="store_true", help="run the measure optimizer")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed,
                          out_override=args.out, threads_override=args.threads)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        os.makedirs(cfg.out, exist_ok=True)
        _emit_resolved_config(cfg)
        checks, nonconverged = _COMMANDS[args.command](cfg, args)
    except (ConfigError, ScopeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as e:
        print(f"non-convergence: {e} (last iterate {e.last_iterate}, residual {e.residual})",
              file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ArithmeticError, MemoryError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    for name, ok in checks.items():
        print(f"check {name}: {'pass' if ok else 'FAIL'}")
    if nonconverged:
        print("warning: an iterative stage stopped at its iteration cap", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    if args.check and not all(checks.values()):
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
