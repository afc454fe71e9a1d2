"""Command-line entry point.

Exit status: 0 on success, 2 on configuration errors (including an
unreachable acceptance threshold), 3 when a statistical verification fails,
1 on any other runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
import time
from importlib import resources

import numpy as np

from . import __version__, bounds, dist, io
from .core import Problem, full_least_squares, gaussian_linear_problem, residue_norm
from .errors import ConfigurationError, GeometryError, GridError, ParseError, SublsqError, ThresholdTooHighError, VerificationFailure
from .esp import build_esp_problem, bias_ordering, generate_shell_grid, run_sadm_experiment, synthesize_esp, water_model, water_sites
from .estimator import EstimatorConfig, default_threads, run_estimator, variance_bound, consistency_bound

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3
MODES = ("with-replacement", "without-replacement")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _pairs(text):
    out = []
    for item in text.split(","):
        n, _, m = item.partition("x")
        try:
            out.append((int(n), int(m)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected pairs like 3x5,4x6, got {text!r}") from None
    return out


def _float_or_inf(text):
    return math.inf if text.lower() in ("inf", "infinity") else float(text)


def load_sites(spec):
    if spec is None or spec == "water":
        if spec is None:
            return water_sites()
        with resources.as_file(resources.files("sublsq") / "data" / "water.sites") as p:
            return io.read_sites(p)
    return io.read_sites(spec)


def add_problem_args(p):
    g = p.add_argument_group("problem source (pick one)")
    g.add_argument("--matrix", help="CSV of basis columns followed by the target column")
    g.add_argument("--sites", help="sites file, or 'water' for the bundled geometry")
    g.add_argument("--grid", help="ESP grid file (with --sites)")
    g.add_argument("--synthetic", action="store_true", help="synthesize a grid around --sites")
    g.add_argument("--wishart", type=int, metavar="N", help="Gaussian design with N coordinates")
    s = p.add_argument_group("synthetic grid / model")
    s.add_argument("--quadrupole", type=float, default=1.0, help="axial quadrupole on O, e bohr^2 (default 1.0)")
    s.add_argument("--grid-count", type=int, default=2106)
    s.add_argument("--grid-seed", type=int, default=None, help="defaults to --seed")
    s.add_argument("--noise", type=float, default=1.0, help="noise scale for --wishart (0: exact fit)")


def synthetic_grid(sites, args):
    seed = args.seed if args.grid_seed is None else args.grid_seed
    pts = generate_shell_grid(sites, count=args.grid_count, seed=seed)
    if [s.label for s in sites] == ["O", "H1", "H2"] or len({s.symmetry_class for s in sites}) == 2:
        model = water_model(args.quadrupole)
    else:
        raise ConfigurationError("--synthetic needs a water-like sites file (two symmetry classes)")
    return synthesize_esp(sites, model, pts)


def build_problem(args, replace=True) -> tuple[Problem, dict]:
    sources = [args.matrix is not None, args.sites is not None or args.synthetic, args.wishart is not None]
    if sum(sources) != 1:
        raise ConfigurationError("give exactly one of --matrix, --sites/--grid/--synthetic, --wishart")
    if args.matrix:
        A, b = io.read_matrix_csv(args.matrix)
        return Problem.from_matrix(A, b, replace=replace, name="matrix"), {"source": "matrix", "path": args.matrix}
    if args.wishart is not None:
        if not replace:
            raise ConfigurationError("without-replacement sampling needs a discrete problem")
        return gaussian_linear_problem(args.wishart, noise_scale=args.noise), {
            "source": "wishart", "n": args.wishart, "noise": args.noise}
    sites = load_sites(args.sites)
    if args.synthetic:
        if args.grid:
            raise ConfigurationError("--grid and --synthetic are exclusive")
        grid = synthetic_grid(sites, args)
        info = {"source": "synthetic-esp", "quadrupole": args.quadrupole, "grid_count": args.grid_count,
                "grid_seed": args.seed if args.grid_seed is None else args.grid_seed}
    elif args.grid:
        grid = io.read_grid(args.grid)
        info = {"source": "esp", "grid": args.grid}
    else:
        raise ConfigurationError("--sites needs --grid or --synthetic")
    info["sites"] = args.sites or "water"
    return build_esp_problem(sites, grid, replace=replace), info


def estimator_config(args, m=None) -> EstimatorConfig:
    return EstimatorConfig(
        m=args.m if m is None else m,
        n_draws=args.n_draws,
        sigma=args.sigma,
        eta=args.eta,
        seed=args.seed,
        max_attempts=args.max_attempts,
        retain=args.retain,
    )


def config_echo(config: EstimatorConfig, mode: str) -> dict:
    return {
        "m": config.m, "n_draws": config.n_draws, "sigma": config.sigma, "eta": config.eta,
        "seed": config.seed, "mode": mode, "retain": config.retain, "max_attempts": config.attempt_cap,
    }


def bound_checks(problem: Problem, result) -> list[dict]:
    checks = []
    for est in result.k_q_sigma_hat.values():
        if result.sigma > 0:
            checks.append({"name": f"K_{est.q:g}^sigma <= 1/sigma", "value": est.value,
                           "limit": 1.0 / result.sigma, "passed": est.within_trivial_bound})
    if not problem.discrete:
        return checks
    rho_sup = residue_norm(problem, result.beta_bar, math.inf).norm_value
    if result.sigma > 0:
        limit = variance_bound(result.n, result.m, result.sigma, rho_sup)
        checks.append({"name": "Tr(Cov) <= n m^2 ||rho(beta_bar)||_inf^2 / sigma", "value": result.trace_cov,
                       "limit": limit, "passed": result.trace_cov <= limit + 3.0 * result.trace_se})
    try:
        alpha = full_least_squares(problem).alpha
    except SublsqError:
        return checks
    k1 = result.k_q_sigma_hat.get(1.0)
    if k1 is not None:
        rho_a = residue_norm(problem, alpha, math.inf).norm_value
        limit = consistency_bound(result.n, result.m, k1.value, result.acceptance_rate, rho_a)
        dist_ = float(np.linalg.norm(result.beta_bar - alpha))
        checks.append({"name": "||beta_bar - alpha|| <= sqrt(n) m sqrt(K_1) ||rho(alpha)||_inf",
                       "value": dist_, "limit": limit, "passed": dist_ <= limit})
    return checks


def _print_table(rows, header):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    line = "  ".join(str(h).ljust(w) for h, w in zip(header, widths)).rstrip()
    print(line)
    print("-" * len(line))
    for r in rows:
        print("  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip())


def _g(x):
    return "-" if x is None else f"{x:.6g}" if isinstance(x, float) else str(x)


def cmd_full_lsq(args):
    problem, info = build_problem(args)
    fit = full_least_squares(problem)
    out = io.ensure_dir(args.out)
    io.write_json(out / "full_lsq.json", {
        "schema_version": io.SCHEMA_VERSION, "kind": "full_lsq", "problem": info,
        "alpha": fit.alpha, "rmsd": fit.rmsd, "mean_signed_error_percent": fit.mean_signed_error,
        "smallest_eigenvalue": fit.s1,
    })
    _print_table([(j, _g(float(a))) for j, a in enumerate(fit.alpha)], ("j", "alpha"))
    print(f"rmsd {fit.rmsd:.6g}  mean signed error {fit.mean_signed_error:.4g}%")
    return EXIT_OK


def cmd_mc_solve(args):
    problem, info = build_problem(args, replace=args.mode == MODES[0])
    config = estimator_config(args)
    threads = default_threads()
    t0 = time.perf_counter()
    result = run_estimator(problem, config, threads=threads)
    elapsed = time.perf_counter() - t0
    out = io.ensure_dir(args.out)
    doc = io.run_summary(result, config_echo(config, args.mode), info, bound_checks(problem, result),
                         {"seconds": elapsed, "threads": threads})
    io.write_json(out / "summary.json", doc)
    io.write_running_average(out / "running_average.csv", *result.running_average)
    io.write_samples(out / "samples.txt", result.samples)
    lo, hi = doc["confidence"]["lower"], doc["confidence"]["upper"]
    _print_table([(j, _g(float(b)), _g(float(l)), _g(float(h))) for j, (b, l, h)
                  in enumerate(zip(result.beta_bar, lo, hi))], ("j", "beta_bar", "lower", "upper"))
    print(f"accepted {result.accepted} of {result.attempted} draws (rate {result.acceptance_rate:.4g})")
    return EXIT_OK


def _histogram_range(x):
    lo, hi = np.quantile(x, [0.01, 0.99])
    return (float(lo), float(hi)) if hi > lo else None


def cmd_sadm(args):
    sites = load_sites(args.sites)
    args.sites = args.sites or "water"
    if args.synthetic == bool(args.grid):
        raise ConfigurationError("give exactly one of --grid or --synthetic")
    grid = synthetic_grid(sites, args) if args.synthetic else io.read_grid(args.grid)
    fit = full_least_squares(build_esp_problem(sites, grid))
    config = EstimatorConfig(m=len({s.symmetry_class for s in sites}), n_draws=args.n_draws, sigma=args.sigma,
                             eta=args.eta, seed=args.seed, max_attempts=args.max_attempts, retain=args.retain)
    threads = default_threads()
    t0 = time.perf_counter()
    runs = run_sadm_experiment(sites, grid, args.extras, config, threads=threads,
                               replace=args.mode == MODES[0])
    elapsed = time.perf_counter() - t0
    out = io.ensure_dir(args.out)
    io.write_json(out / "reference_fit.json", {
        "schema_version": io.SCHEMA_VERSION, "kind": "full_lsq", "alpha": fit.alpha, "rmsd": fit.rmsd,
        "mean_signed_error_percent": fit.mean_signed_error, "smallest_eigenvalue": fit.s1,
    })
    info = {"source": "synthetic-esp" if args.synthetic else "esp", "sites": args.sites,
            "grid_points": len(grid)}
    rows = []
    for run in runs:
        r = run.result
        tag = f"extra{run.extra}"
        doc = io.run_summary(r, config_echo(dataclasses.replace(config, m=run.m), args.mode),
                             dict(info, extra=run.extra), timing={"seconds": elapsed, "threads": threads})
        io.write_json(out / f"summary_{tag}.json", doc)
        io.write_running_average(out / f"running_average_{tag}.csv", *r.running_average)
        if r.samples is not None:
            x = r.samples[:, args.coordinate]
            io.write_histogram(out / f"histogram_{tag}.csv", dist.histogram(x, args.bins, _histogram_range(x)))
            io.write_fits(out / f"fits_{tag}.csv", [dist.fit_cauchy(x), dist.fit_gaussian(x)])
            if args.dump_samples:
                io.write_samples(out / f"samples_{tag}.txt", r.samples)
        se = math.sqrt(r.cov[args.coordinate, args.coordinate] / r.accepted)
        rows.append((run.extra, run.m, float(r.beta_bar[args.coordinate]),
                     float(r.beta_bar[args.coordinate] - fit.alpha[args.coordinate]), se, r.acceptance_rate))
    order = bias_ordering(runs, fit.alpha, args.coordinate)
    io.write_csv(out / "sadm_overview.csv", ["extra", "m", "beta_bar", "bias", "std_error", "acceptance_rate"], rows)
    _print_table([tuple(_g(v) for v in r) for r in rows], ("extra", "m", "beta_bar", "bias", "se", "acc_rate"))
    print(f"alpha = {np.array2string(fit.alpha, precision=6)}; error ordering "
          f"{'holds' if order.passed else 'violated'} (inversions at steps {list(order.inversions)})")
    return EXIT_OK


def cmd_plan(args):
    q = args.q
    p = args.p if args.p is not None else (math.inf if q == 2 else 2 * q / (q - 2) if q > 2 else math.nan)
    m = args.m if args.m is not None else (bounds.optimal_wishart_parameters(args.n)[1] if args.n >= 2 else args.n)
    inputs = bounds.BoundInputs(n=args.n, m=m, q=q, p=p, epsilon=args.eps, eta=args.eta, rho_norm=args.rho,
                                sigma=args.sigma, subg_A=args.A, subg_B=args.B)
    reports = bounds.plan(inputs)
    rows = [(r.name, _g(r.value), "yes" if r.valid else "no", r.notes) for r in reports]
    print(f"n = {args.n}, m = {m}, k = {inputs.k}, q = {q:g}, p = {p:g}")
    _print_table(rows, ("bound", "value", "valid", "notes"))
    if args.out:
        out = io.ensure_dir(args.out)
        io.write_csv(out / "plan.csv", ["bound", "value", "valid", "notes"],
                     ((r.name, math.nan if r.value is None else float(r.value), int(r.valid), r.notes) for r in reports))
    return EXIT_OK


def _verdict_rows(verdicts):
    return [(v.suite, v.check, v.n, v.m, float(v.statistic), float(v.limit), int(v.passed), v.detail) for v in verdicts]


def _report_verdicts(verdicts, out, name):
    header = ["suite", "check", "n", "m", "statistic", "limit", "passed", "detail"]
    io.write_csv(io.ensure_dir(out) / name, header, _verdict_rows(verdicts))
    _print_table([(v.check, v.n, v.m, _g(float(v.statistic)), _g(float(v.limit)), "PASS" if v.passed else "FAIL")
                  for v in verdicts], ("check", "n", "m", "statistic", "limit", "verdict"))
    failed = [v for v in verdicts if not v.passed]
    if failed:
        raise VerificationFailure(f"{len(failed)} of {len(verdicts)} checks failed: "
                                  + ", ".join(f"{v.check} (n={v.n}, m={v.m})" for v in failed))
    return EXIT_OK


def cmd_verify_wishart(args):
    from .verify import run_wishart_suite
    verdicts = run_wishart_suite(args.pairs, args.draws, args.seed, args.heavy_n, args.q)
    return _report_verdicts(verdicts, args.out, "wishart_verdicts.csv")


def cmd_verify_subgaussian(args):
    from .verify import run_subgaussian_suite
    fit, verdicts = run_subgaussian_suite(args.n, args.m, args.law, args.draws, args.seed)
    print(f"fitted A = {fit.A:.6g}, B = {fit.B:.6g}")
    return _report_verdicts(verdicts, args.out, "subgaussian_verdicts.csv")


def cmd_distfit(args):
    samples = io.read_samples(args.samples)
    if not 0 <= args.coordinate < samples.shape[1]:
        raise ConfigurationError(f"coordinate {args.coordinate} out of range for dimension {samples.shape[1]}")
    x = samples[:, args.coordinate]
    summary = dist.summarize(x, args.k_top)
    out = io.ensure_dir(args.out)
    io.write_fits(out / "fits.csv", [summary["cauchy"], summary["gaussian"]])
    io.write_histogram(out / "histogram.csv", dist.histogram(x, args.bins, _histogram_range(x)))
    checkpoints = np.unique(np.round(np.geomspace(1, len(x), 200)).astype(np.int64))
    io.write_running_average(out / "running_average.csv", checkpoints, dist.running_average(x, checkpoints))
    doc = {"schema_version": io.SCHEMA_VERSION, "kind": "distfit", "samples": args.samples,
           "coordinate": args.coordinate, "count": summary["count"],
           "preferred_loglik": summary["preferred_loglik"], "preferred_ks": summary["preferred_ks"],
           "skewness": summary["skewness"]}
    if "tail" in summary:
        t = summary["tail"]
        doc["tail"] = {"alpha": t.alpha, "ci_low": t.ci_low, "ci_high": t.ci_high, "k_top": t.k_top}
    io.write_json(out / "distfit.json", doc)
    _print_table([(f.family, _g(f.location), _g(f.scale), _g(f.log_likelihood), _g(f.ks_statistic))
                  for f in (summary["cauchy"], summary["gaussian"])],
                 ("family", "location", "scale", "loglik", "ks"))
    return EXIT_OK


def add_run_args(p, default_retain="none"):
    p.add_argument("--n-draws", type=int, default=100_000, help="accepted draws N")
    p.add_argument("--sigma", type=float, default=0.0, help="acceptance threshold on s1 (0: relative floor)")
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=MODES, default=MODES[0])
    p.add_argument("--retain", default=default_retain, help="none, all or reservoir:k")
    p.add_argument("--max-attempts", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sublsq", description="Randomized subsystem least squares.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="verb")

    p = sub.add_parser("full-lsq", help="exact least squares over a discrete problem")
    add_problem_args(p)
    p.add_argument("--seed", type=int, default=0, help="seed for a synthetic grid")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_full_lsq)

    p = sub.add_parser("mc-solve", help="run the Monte Carlo estimator")
    add_problem_args(p)
    p.add_argument("--m", type=int, required=True, help="rows per subproblem")
    add_run_args(p)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_mc_solve)

    p = sub.add_parser("sadm", help="charge-fitting experiment over m = n_s + extra")
    p.add_argument("--sites", default=None, help="sites file or 'water' (default)")
    p.add_argument("--grid")
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--quadrupole", type=float, default=1.0)
    p.add_argument("--grid-count", type=int, default=2106)
    p.add_argument("--grid-seed", type=int, default=None, help="defaults to --seed")
    p.add_argument("--extras", type=_int_list, default=[0, 2, 4, 8])
    add_run_args(p, default_retain="all")
    p.add_argument("--coordinate", type=int, default=0, help="charge class for histograms and fits")
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--dump-samples", action="store_true")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_sadm)

    p = sub.add_parser("plan", help="evaluate closed-form bounds")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, default=None, help="defaults to m*")
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--p", type=_float_or_inf, default=None, help="defaults to the conjugate with 2/p + 2/q = 1")
    p.add_argument("--eps", type=float, default=1e-2)
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--A", type=float, default=1.0)
    p.add_argument("--B", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("verify-wishart", help="Wishart tail, density and moment conformance")
    p.add_argument("--draws", type=int, default=1_000_000)
    p.add_argument("--pairs", type=_pairs, default=[(3, 5), (4, 6), (4, 8)], help="e.g. 3x5,4x6,4x8")
    p.add_argument("--heavy-n", type=int, default=4, help="n for the m = n heavy-tail check (0 skips)")
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_verify_wishart)

    p = sub.add_parser("verify-subgaussian", help="fitted sub-Gaussian tail conformance")
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--m", type=int, default=8)
    p.add_argument("--law", default="rademacher", choices=("rademacher", "uniform", "normal"))
    p.add_argument("--draws", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_verify_subgaussian)

    p = sub.add_parser("distfit", help="fit retained samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--coordinate", type=int, default=0)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--k-top", type=int, default=None)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_distfit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except ThresholdTooHighError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigurationError, ParseError, GridError, GeometryError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SublsqError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
