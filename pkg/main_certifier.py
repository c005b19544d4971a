import argparse
import logging
import math
import secrets
import sys
from contextlib import contextmanager
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

import config
from mcmc.bound_calculus import (autocorrelation_time, bias_bound, burnin_coupling, conductance_burnin_length,
                                 confidence_bound, est_upper, literature_bound, lp_norm_decay, minimize_burnin,
                                 sample_size_for_eps, sample_size_lezaud, sample_size_markov,
                                 stationary_worst_error, suggest_burnin_from_constant, u_factor, v_factor,
                                 w_factor, LITERATURE_BOUNDS)
from mcmc.finite_chain import (analytic_example_error, asymptotic_variance, bounds_finite, bounds_suggested,
                               burnin_constant, example_constant, example_gaps, exact_mse, make_example,
                               spectral_decompose, stationary_distribution, suggest_burnin_finite)
from mcmc.mcmc_estimator import certify, empirical_mse
from mcmc.planner import example2_mse_bounds, plan_contracting_normals, plan_convex_body, plan_logconcave, \
    plan_worked_example
from models.errors import CertifierError, NumericalFailure, SchemaError
from models.schemas import (BurninTableDocument, ContractingNormalsDocument, ConvexBodyDocument,
                            InitialDistribution, LogConcaveDocument, MatrixDocument, ReversibleChain,
                            RunConfig, RunDocument, ToyDocument, ToySpec, WorkedExampleDocument, as_p)
from utils.config_parser import parse_config
from utils.csv_writer import write_csv
from utils.matrix_io import read_matrix
from utils.report_generator import generate_certification_report, generate_plan_report

logger = logging.getLogger(__name__)

NORMALS_THETAS = [0.91, 0.92, 0.93, 0.94, 0.95, 0.96]
EST_CURVE_BETA = 0.99
EST_CURVE_C = 1e30

# Caption settings of the reproduced figures: (toy spec, default N grid)
FIGURES = {
    "fig2_circle": (ToySpec(family="circle", T=999), (1.5e6, 1e9)),
    "fig3_hypercube": (ToySpec(family="hypercube", d=50), (2e3, 1e7)),
    "fig4_star": (ToySpec(family="star", T=100000, theta=0.1), (1e2, 1e6)),
}


@contextmanager
def _output(path: Optional[str]):
    if path is None:
        yield sys.stdout
    else:
        with open(path, "w") as f:
            yield f


def _int_list(text: str) -> List[int]:
    return [int(float(part)) for part in text.split(",") if part.strip()]


def _float_list(text: str) -> List[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _log_grid(lo: float, hi: float, points: int = 30) -> List[int]:
    return sorted(set(int(round(v)) for v in np.geomspace(lo, hi, points)))


def _load(path: Optional[str], *kinds):
    if path is None:
        raise SchemaError("this subcommand needs --config", key="config")
    document = parse_config(path)
    if not isinstance(document, kinds):
        raise SchemaError(f"config kind {document.kind} is not accepted here", key="kind")
    return document


# ---------------------------------------------------------------------------
# Finite chains
# ---------------------------------------------------------------------------

def _finite_problem(document) -> Tuple[str, ReversibleChain, np.ndarray, InitialDistribution]:
    """Chain, unit-norm test function and point-mass start described by a toy or matrix document"""
    if isinstance(document, ToyDocument):
        spec = document.to_spec()
        chain, u1, nu = make_example(spec)
        return spec.family, chain, u1, nu
    matrix = read_matrix(document.path)
    pi = stationary_distribution(matrix)
    chain = ReversibleChain(matrix=matrix, pi=pi)
    if document.start_state >= chain.size:
        raise SchemaError(f"start_state {document.start_state} outside {chain.size} states", key="start_state")
    s = spectral_decompose(chain)
    f = np.asarray(s.eigenvectors[:, 1]) if chain.size > 1 else np.zeros(1)
    return "matrix", chain, f, InitialDistribution.point_mass(document.start_state, pi)


def cmd_finite_spectrum(args) -> int:
    label, chain, f, _ = _finite_problem(_load(args.config, ToyDocument, MatrixDocument))
    s = spectral_decompose(chain)
    coefficients = s.coefficients(f)
    logger.info(f"{label}: beta1={s.beta1:.12g}, beta={s.beta:.12g}")
    rows = [{"k": k, "eigenvalue": float(s.eigenvalues[k]), "coefficient": float(coefficients[k])}
            for k in range(s.size)]
    with _output(args.out) as out:
        write_csv(out, "finite_spectrum", ["k", "eigenvalue", "coefficient"], rows)
    return 0


def cmd_finite_error(args) -> int:
    document = _load(args.config, ToyDocument, MatrixDocument)
    label, chain, f, nu = _finite_problem(document)
    s = spectral_decompose(chain)
    C = burnin_constant(chain.pi, nu)
    n0 = suggest_burnin_finite(C, s.beta) if args.n0 is None else args.n0
    rows = []
    for n in _int_list(args.n):
        lower, upper = bounds_finite(s, C, n, n0)
        upper_beta = bounds_finite(s, C, n, n0, gap="beta")[1]
        row = {"n": n, "n0": n0, "exact_error": math.sqrt(exact_mse(chain, nu, f, n, n0)),
               "lower_bound": math.sqrt(lower), "upper_bound": math.sqrt(upper),
               "upper_bound_beta": math.sqrt(upper_beta)}
        if isinstance(document, ToyDocument):
            row["analytic_error"] = analytic_example_error(document.to_spec(), n, n0)
        rows.append(row)
    header = ["n", "n0", "exact_error", "analytic_error", "lower_bound", "upper_bound", "upper_bound_beta"]
    with _output(args.out) as out:
        write_csv(out, "finite_error", header, rows)
    return 0


def cmd_finite_burnin(args) -> int:
    label, chain, f, nu = _finite_problem(_load(args.config, ToyDocument, MatrixDocument))
    s = spectral_decompose(chain)
    C = burnin_constant(chain.pi, nu)
    row = {"chain": label, "states": chain.size, "beta1": s.beta1, "beta": s.beta, "C": C,
           "suggested_n0": suggest_burnin_finite(C, s.beta), "asymptotic_variance": asymptotic_variance(s, f)}
    with _output(args.out) as out:
        write_csv(out, "finite_burnin", list(row), [row])
    return 0


def cmd_finite_example(args) -> int:
    """Analytic summary of a toy family, valid far beyond the enumerable sizes"""
    spec = _load(args.config, ToyDocument).to_spec()
    gaps = example_gaps(spec)
    C = example_constant(spec)
    row = {"family": spec.family, "states": spec.num_states, "beta1": gaps.beta1, "beta": gaps.beta, "C": C,
           "suggested_n0": suggest_burnin_finite(C, gaps.beta)}
    with _output(args.out) as out:
        write_csv(out, "finite_example", list(row), [row])
    return 0


# ---------------------------------------------------------------------------
# Bound calculus
# ---------------------------------------------------------------------------

_INTEGER_PARAMS = {"n", "n0", "N"}


def _parse_params(pairs: Iterable[str]) -> Dict[str, float]:
    params = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise SchemaError(f"expected key=value, got {pair!r}", key=pair)
        params[key] = math.inf if value == "inf" else float(value)
        if key in _INTEGER_PARAMS:
            params[key] = int(params[key])
    return params


BOUND_KINDS = {
    "est_upper": lambda q: est_upper(q["n"], q.get("n0", 0), q["beta"], q["C"], q.get("p", math.inf)),
    "suggest_burnin": lambda q: suggest_burnin_from_constant(q["beta"], q["C"], q.get("p", math.inf)),
    "sample_size": lambda q: sample_size_for_eps(q["beta"], q["eps"]),
    "bias": lambda q: bias_bound(q["beta"], q["n"], q.get("n0", 0), q.get("p", math.inf), q["density_norm"]),
    "stationary_worst": lambda q: stationary_worst_error(q["lam"], q["N"]),
    "w_factor": lambda q: w_factor(q["n"], q["a"]),
    "u_factor": lambda q: u_factor(q["a"], q["n"]),
    "v_factor": lambda q: v_factor(q["beta"], q["n"], q.get("p", math.inf)),
    "markov": lambda q: confidence_bound("markov", **q),
    "lezaud": lambda q: confidence_bound("lezaud", **q),
    "lp_norm_decay": lambda q: lp_norm_decay(q["beta"], q["n"], q["p"]),
    "autocorrelation_time": lambda q: autocorrelation_time(q["beta1"]),
    "sample_size_markov": lambda q: sample_size_markov(q["beta"], q["eps"], q["alpha"]),
    "sample_size_lezaud": lambda q: sample_size_lezaud(q["beta1"], q["eps"], q["alpha"]),
    "burnin_coupling": lambda q: burnin_coupling(q["pi_min"], q["beta"], q["alpha"]),
    "conductance_burnin_length": lambda q: conductance_burnin_length(q["phi"], q["density_sup"]),
}


def cmd_bound_eval(args) -> int:
    params = _parse_params(args.param or [])
    if args.kind in LITERATURE_BOUNDS:
        value = literature_bound(args.kind, **params)
    else:
        try:
            value = BOUND_KINDS[args.kind](params)
        except KeyError as e:
            raise SchemaError(f"{args.kind} needs parameter {e.args[0]}", key=str(e.args[0])) from e
    row = {"kind": args.kind, "value": value}
    row.update(params)
    with _output(args.out) as out:
        write_csv(out, "bound", ["kind", "value"] + sorted(params), [row])
    return 0


def burnin_table(N_list: List[int], beta_list: List[float], C: float, p: float) -> List[Dict]:
    """Optimal and suggested burn-ins for the p in {2} or [4, inf] branch and the given p in (2, 4)"""
    rows = []
    for N in N_list:
        for beta in beta_list:
            n_opt, curve = minimize_burnin(N, beta, C, math.inf)
            n_opt_p, curve_p = minimize_burnin(N, beta, C, p)
            rows.append({"N": N, "beta": beta, "n_opt": n_opt, "suggested_n0": curve.suggested_n0,
                         "n_opt_p": n_opt_p, "suggested_n0_p": curve_p.suggested_n0,
                         "feasible": curve.feasible, "feasible_p": curve_p.feasible})
    return rows


BURNIN_TABLE_HEADER = ["N", "beta", "n_opt", "suggested_n0", "n_opt_p", "suggested_n0_p", "feasible", "feasible_p"]


def cmd_burnin_table(args) -> int:
    document = BurninTableDocument(version=1, kind="burnin_table") if args.config is None \
        else _load(args.config, BurninTableDocument)
    rows = burnin_table(document.N_list, document.beta_list, document.C, document.p)
    with _output(args.out) as out:
        write_csv(out, "burnin_table", BURNIN_TABLE_HEADER, rows)
    return 0


# ---------------------------------------------------------------------------
# Planner
# ---------------------------------------------------------------------------

NORMALS_HEADER = ["theta", "c", "beta_hat", "n0", "n", "N"]
PLAN_HEADER = ["label", "delta", "gap_lower", "n0", "n", "N", "error_bound", "error_lower",
               "oracle_budget", "complexity"]


def _normals_row(plan) -> Dict:
    return {"theta": plan.theta, "c": plan.c_star, "beta_hat": plan.beta_hat,
            "n0": plan.n0, "n": plan.n, "N": plan.N}


def _plan_row(plan) -> Dict:
    row = plan.model_dump(include=set(PLAN_HEADER))
    row["N"] = plan.N
    return row


def _write_report(path: Optional[str], text: str):
    if path is not None:
        with open(path, "w") as f:
            f.write(text)
        logger.info(f"Report saved to {path}")


def cmd_normals_table(args) -> int:
    document = ContractingNormalsDocument(version=1, kind="contracting_normals", theta=0.5) \
        if args.config is None else _load(args.config, ContractingNormalsDocument)
    thetas = _float_list(args.theta) if args.theta else NORMALS_THETAS
    plans = [plan_contracting_normals(theta, document.x0, document.delta_init, as_p(document.p), document.eps)
             for theta in thetas]
    with _output(args.out) as out:
        write_csv(out, "normals_table", NORMALS_HEADER, [_normals_row(plan) for plan in plans])
    _write_report(args.report, "\n".join(generate_plan_report(plan) for plan in plans))
    return 0


def cmd_plan(args) -> int:
    document = _load(args.config, LogConcaveDocument, ConvexBodyDocument, ContractingNormalsDocument,
                     WorkedExampleDocument)
    if isinstance(document, LogConcaveDocument):
        plan = plan_logconcave(document.to_problem())
    elif isinstance(document, ConvexBodyDocument):
        plan = plan_convex_body(document.to_problem())
    elif isinstance(document, ContractingNormalsDocument):
        plan = plan_contracting_normals(document.theta, document.x0, document.delta_init,
                                        as_p(document.p), document.eps)
    else:
        plan = plan_worked_example(document.which, document.delta, document.xi, document.x0, document.n)

    with _output(args.out) as out:
        if isinstance(document, ContractingNormalsDocument):
            write_csv(out, "normals_table", NORMALS_HEADER, [_normals_row(plan)])
        else:
            write_csv(out, "plan", PLAN_HEADER, [_plan_row(plan)])
    _write_report(args.report, generate_plan_report(plan))
    return 0


# ---------------------------------------------------------------------------
# Estimation
# ---------------------------------------------------------------------------

def reference_bounds(cfg: RunConfig) -> Tuple[float, float]:
    """Root-MSE interval a run is certified against; (0, inf) when no bound covers it"""
    kernel, initial, f = cfg.kernel, cfg.initial, cfg.f
    if kernel.toy is not None and f.name == "u1" and initial.kind in ("point", "canonical") \
            and not initial.state and not kernel.lazy:
        lower, upper = bounds_finite(example_gaps(kernel.toy), example_constant(kernel.toy), cfg.n, cfg.n0)
        return math.sqrt(lower), math.sqrt(upper)
    if kernel.kind == "example2" and f.name == "example2_u" and initial.kind == "uniform_interval":
        plan = plan_worked_example("example2", delta=initial.radius, n=cfg.n)
        if cfg.n0 >= plan.n0:
            return plan.error_lower, plan.error_bound
    if kernel.kind == "independence_normal" and f.name == "identity" and initial.kind == "uniform_interval":
        plan = plan_worked_example("independence_normal", delta=initial.radius, xi=kernel.xi,
                                   x0=initial.center, n=cfg.n)
        if cfg.n0 >= plan.n0:
            return 0.0, plan.error_bound
    return 0.0, math.inf


def cmd_estimate(args) -> int:
    document = _load(args.config, RunDocument)
    seed = args.seed
    if seed is None and document.seed is None:
        seed = secrets.randbits(64)
        print(f"seed={seed}", file=sys.stderr)
    cfg = document.to_run_config(seed=seed, replications=args.replications, threads=args.threads)
    report = empirical_mse(cfg)
    verdict = certify(report, reference_bounds(cfg))
    row = verdict.csv_row()
    with _output(args.out) as out:
        write_csv(out, "certification", list(row), [row])
    _write_report(args.report, generate_certification_report(verdict))
    return 0


# ---------------------------------------------------------------------------
# Figure data
# ---------------------------------------------------------------------------

FIGURE_HEADER = ["N", "n0", "exact_error", "lower_bound", "upper_bound"]
EST_CURVE_HEADER = ["N", "n0", "est_suggested", "est_half", "stationary_worst_error"]


def figure_data(which: str, grid: Optional[List[int]] = None) -> Tuple[List[str], List[Dict]]:
    if which in FIGURES:
        spec, (lo, hi) = FIGURES[which]
        gaps = example_gaps(spec)
        n0 = suggest_burnin_finite(example_constant(spec), gaps.beta)
        rows = []
        for N in grid or _log_grid(lo, hi):
            if N <= n0:
                continue
            n = N - n0
            lower, upper = bounds_suggested(gaps, n)
            rows.append({"N": N, "n0": n0, "exact_error": analytic_example_error(spec, n, n0),
                         "lower_bound": math.sqrt(lower), "upper_bound": math.sqrt(upper)})
        return FIGURE_HEADER, rows

    if which == "fig5_example2":
        n0 = plan_worked_example("example2", delta=1e-3).n0
        rows = []
        for N in grid or _log_grid(20, 1e5):
            if N <= n0:
                continue
            lower, upper, exact = example2_mse_bounds(N - n0)
            rows.append({"N": N, "n0": n0, "exact_error": math.sqrt(exact),
                         "lower_bound": math.sqrt(max(lower, 0.0)), "upper_bound": math.sqrt(upper)})
        return FIGURE_HEADER, rows

    if which == "fig_est_curves":
        n0 = suggest_burnin_from_constant(EST_CURVE_BETA, EST_CURVE_C, math.inf)
        rows = []
        for N in grid or _log_grid(1e4, 1e5):
            half = N // 2
            rows.append({
                "N": N,
                "n0": n0,
                "est_suggested": est_upper(N - n0, n0, EST_CURVE_BETA, EST_CURVE_C, math.inf) if n0 < N else None,
                "est_half": est_upper(N - half, half, EST_CURVE_BETA, EST_CURVE_C, math.inf),
                "stationary_worst_error": stationary_worst_error(EST_CURVE_BETA, N),
            })
        return EST_CURVE_HEADER, rows

    raise SchemaError(f"unknown figure {which}", key="which")


def cmd_figure_data(args) -> int:
    header, rows = figure_data(args.which, _int_list(args.grid) if args.grid else None)
    with _output(args.out) as out:
        write_csv(out, args.which, header, rows)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="main_certifier", description="MCMC error bounds, burn-in plans and certification")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="versioned JSON config")
    common.add_argument("--out", help="CSV output path (default stdout)")
    common.add_argument("--log-level", default=config.LOG_LEVEL)

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("finite-spectrum", parents=[common])
    p.set_defaults(handler=cmd_finite_spectrum)
    p = sub.add_parser("finite-error", parents=[common])
    p.add_argument("--n", default="1,10,100,1000", help="comma-separated sample sizes")
    p.add_argument("--n0", type=int, help="burn-in (default: suggested)")
    p.set_defaults(handler=cmd_finite_error)
    p = sub.add_parser("finite-burnin", parents=[common])
    p.set_defaults(handler=cmd_finite_burnin)
    p = sub.add_parser("finite-example", parents=[common])
    p.set_defaults(handler=cmd_finite_example)

    p = sub.add_parser("bound-eval", parents=[common])
    p.add_argument("--kind", required=True, choices=sorted(set(BOUND_KINDS) | set(LITERATURE_BOUNDS)))
    p.add_argument("--param", action="append", help="key=value, repeatable")
    p.set_defaults(handler=cmd_bound_eval)
    p = sub.add_parser("burnin-table", parents=[common])
    p.set_defaults(handler=cmd_burnin_table)

    p = sub.add_parser("normals-table", parents=[common])
    p.add_argument("--theta", help="comma-separated theta values")
    p.add_argument("--report", help="write a text report to this path")
    p.set_defaults(handler=cmd_normals_table)
    p = sub.add_parser("plan", parents=[common])
    p.add_argument("--report", help="write a text report to this path")
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("estimate", parents=[common])
    p.add_argument("--seed", type=int, help="64-bit seed (default: drawn and printed)")
    p.add_argument("--replications", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--report", help="write a text report to this path")
    p.set_defaults(handler=cmd_estimate)

    p = sub.add_parser("figure-data", parents=[common])
    p.add_argument("--which", required=True,
                   choices=sorted(FIGURES) + ["fig5_example2", "fig_est_curves"])
    p.add_argument("--grid", help="comma-separated N values")
    p.set_defaults(handler=cmd_figure_data)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr)
    try:
        return args.handler(args)
    except NumericalFailure as e:
        logger.error(f"Numerical failure: {e}")
        return 4
    except (ValidationError, CertifierError, ValueError, OSError) as e:
        logger.error(f"Rejected input: {e}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
