"""Command-line harness: seeded experiment runs emitting self-describing CSVs.

Subcommands: simulate, filter, density-grid, map, entropy, convergence,
figure1, table1, table2.  Every CSV starts with a comment line carrying the
schema version, the seed and the full parameter echo; reruns with identical
parameters and --threads 1 are byte-identical.  On failure all partially
written outputs are removed and the exit code is non-zero (2 for usage
errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import analysis, kde, map_search
from .bpf import run_filter
from .kalman import gaussian_entropy, gaussian_pdf, run_kalman
from .kernels import KERNEL_NAMES, make_kernel
from .model import ModelConfig, default_config, parse_model_config, simulate

SCHEMA_VERSION = 1
MEMORY_CAP_BYTES = 4 * 1024**3
FIGURE1_KS = (4, 7, 10)
TABLE1_KS = (5, 9)
TABLE2_KS = (3, 4, 5)
DEFAULT_REPLICATES = 30


class CliError(Exception):
    """Usage-level problem: bad flags, missing files, infeasible sizes."""


@dataclass
class RunContext:
    config: ModelConfig
    seed: int
    threads: int
    out_dir: str
    written: list

    def path(self, name: str) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        return os.path.join(self.out_dir, name)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(ctx: RunContext, path: str, header: list, rows, params: dict):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    echo = " ".join(f"{k}={v}" for k, v in params.items())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION} seed={ctx.seed} {echo}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    ctx.written.append(path)


def append_comment(path: str, text: str):
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# {text}\n")


def _parse_float_list(text: str, name: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise CliError(f"invalid {name}: {text!r}") from exc


def _parse_int_list(text: str, name: str) -> list[int]:
    values = []
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            continue
        try:
            values.append(int(piece))
        except ValueError as exc:
            raise CliError(f"invalid {name}: {piece!r}") from exc
    if not values:
        raise CliError(f"{name} must not be empty")
    return values


def _check_memory(n_particles: int, dim: int, grid_points: int = 0):
    # cloud + proposals + weights + grid buffers, with slack for temporaries
    need = 4 * n_particles * dim * 8 + grid_points * (dim + 3) * 8
    if need > MEMORY_CAP_BYTES:
        raise CliError(
            f"configuration needs ~{need / 1024**3:.1f} GiB "
            f"(cap {MEMORY_CAP_BYTES / 1024**3:.1f} GiB); refusing"
        )


def _posterior(ctx: RunContext):
    model = ctx.config.build()
    traj = simulate(model, ctx.config.T, ctx.seed)
    posterior = run_kalman(model.A, model.B, traj.observations)[-1]
    return traj, model, posterior


def _default_n(k: int, dim: int) -> int:
    return kde.min_particles(k, dim, 0)


# --- subcommands -----------------------------------------------------------


def cmd_simulate(ctx: RunContext, args) -> None:
    model = ctx.config.build()
    traj = simulate(model, ctx.config.T, ctx.seed)
    out = args.out or ctx.path("trajectory.csv")
    header = ["t"] + [f"x{i+1}" for i in range(model.dim_x)] \
                   + [f"y{i+1}" for i in range(model.dim_y)]
    rows = []
    for t in range(ctx.config.T + 1):
        obs = [None] * model.dim_y if t == 0 else list(traj.observations[t - 1])
        rows.append([t] + list(traj.states[t]) + obs)
    write_csv(ctx, out, header, rows, {"cmd": "simulate", "T": ctx.config.T})


def cmd_filter(ctx: RunContext, args) -> None:
    model = ctx.config.build()
    _check_memory(args.n, model.dim_x)
    traj = simulate(model, ctx.config.T, ctx.seed)
    cloud = run_filter(model, traj.observations, args.n, args.filter_seed,
                       resampler=args.resampler)
    out = args.dump_cloud or ctx.path("cloud.csv")
    header = ["t", "n"] + [f"x{i+1}" for i in range(model.dim_x)]
    rows = ([cloud.t, n] + list(cloud.particles[n]) for n in range(cloud.n_particles))
    write_csv(ctx, out, header, rows,
              {"cmd": "filter", "n": args.n, "filter_seed": args.filter_seed,
               "resampler": args.resampler, "T": ctx.config.T})
    if args.dump_kalman:
        posteriors = run_kalman(model.A, model.B, traj.observations)
        krows = []
        for t, g in enumerate(posteriors, start=1):
            cov = g.cov
            krows.append([t] + list(g.mean) + [cov[i, j] for i in range(model.dim_x)
                                               for j in range(model.dim_x)]
                         + [gaussian_entropy(g)])
        kheader = (["t"] + [f"mean{i+1}" for i in range(model.dim_x)]
                   + [f"cov{i+1}{j+1}" for i in range(model.dim_x)
                      for j in range(model.dim_x)]
                   + ["entropy_nats"])
        write_csv(ctx, args.dump_kalman, kheader, krows,
                  {"cmd": "filter-kalman", "T": ctx.config.T})


def _density_grid(ctx: RunContext, model, posterior, cloud, kernel_name, k, args):
    kernel = make_kernel(kernel_name, model.dim_x)
    est = kde.DensityEstimator(cloud=cloud, kernel=kernel, k=k)
    count = args.grid_count
    step = args.grid_step
    if args.grid_offset is not None:
        offsets = np.asarray(_parse_float_list(args.grid_offset, "--grid-offset"))
        if offsets.size != model.dim_x:
            raise CliError(f"--grid-offset needs {model.dim_x} coordinates")
        grid = analysis.Grid(offsets=offsets, step=step,
                             counts=np.full(model.dim_x, count))
    else:
        grid = analysis.Grid.centered(posterior.mean, step, count)
    pts = grid.points()
    p_hat = kde.estimate_density(est, pts)
    p_true = gaussian_pdf(posterior, pts)
    return grid, pts, p_hat, p_true


def cmd_density_grid(ctx: RunContext, args) -> None:
    model = ctx.config.build()
    n = args.n or _default_n(args.k, model.dim_x)
    _check_memory(n, model.dim_x, args.grid_count**model.dim_x)
    traj = simulate(model, ctx.config.T, ctx.seed)
    posterior = run_kalman(model.A, model.B, traj.observations)[-1]
    cloud = run_filter(model, traj.observations, n, args.filter_seed)
    _, pts, p_hat, p_true = _density_grid(ctx, model, posterior, cloud,
                                          args.kernel, args.k, args)
    out = args.out or ctx.path("grid.csv")
    rows = zip(pts[:, 0], pts[:, 1], p_hat, p_true, np.abs(p_hat - p_true))
    write_csv(ctx, out, ["x1", "x2", "p_hat", "p_true", "abs_err"], rows,
              {"cmd": "density-grid", "k": args.k, "kernel": args.kernel,
               "n": n, "filter_seed": args.filter_seed,
               "grid_step": args.grid_step, "grid_count": args.grid_count})


def cmd_map(ctx: RunContext, args) -> None:
    model = ctx.config.build()
    n = args.n or _default_n(args.k, model.dim_x)
    _check_memory(n, model.dim_x)
    x0 = _parse_float_list(args.x0, "--x0")
    if len(x0) != model.dim_x:
        raise CliError(f"--x0 needs {model.dim_x} coordinates")
    traj = simulate(model, ctx.config.T, ctx.seed)
    cloud = run_filter(model, traj.observations, n, args.filter_seed)
    kernel = make_kernel(args.kernel, model.dim_x)
    est = kde.DensityEstimator(cloud=cloud, kernel=kernel, k=args.k)
    trace = map_search.gradient_ascent(
        None, None, x0, step=args.step, max_iters=args.max_iters,
        grad_tol=args.grad_tol,
        value_grad_fn=lambda x: kde.estimate_value_gradient(est, x),
    )
    out = args.out or ctx.path("trace.csv")
    header = ["i"] + [f"x{i+1}" for i in range(model.dim_x)] + ["value", "grad_norm"]
    rows = ([i] + list(trace.iterates[i]) + [trace.values[i], trace.gradient_norms[i]]
            for i in range(len(trace.values)))
    write_csv(ctx, out, header, rows,
              {"cmd": "map", "k": args.k, "kernel": args.kernel, "n": n,
               "filter_seed": args.filter_seed, "step": args.step,
               "x0": args.x0, "stop": trace.stop_reason})


def cmd_entropy(ctx: RunContext, args) -> None:
    model = ctx.config.build()
    n = args.n or _default_n(args.k, model.dim_x)
    _check_memory(n, model.dim_x)
    traj, model, posterior = _posterior(ctx)
    cloud = run_filter(model, traj.observations, n, args.filter_seed)
    kernel = make_kernel(args.kernel, model.dim_x)
    est = kde.DensityEstimator(cloud=cloud, kernel=kernel, k=args.k)
    value, floored = analysis.entropy_estimate(est)
    truth = gaussian_entropy(posterior)
    out = args.out or ctx.path("entropy.csv")
    write_csv(ctx, out,
              ["k", "n", "entropy_est", "entropy_true", "abs_err", "floored_terms"],
              [[args.k, n, value, truth, abs(value - truth), floored]],
              {"cmd": "entropy", "k": args.k, "kernel": args.kernel,
               "n": n, "filter_seed": args.filter_seed})


def cmd_convergence(ctx: RunContext, args) -> None:
    model = ctx.config.build()
    k_list = _parse_int_list(args.k_list, "--k-list")
    metric = args.metric
    regime = args.regime
    for k in k_list:
        _check_memory(analysis.particles_for_regime(k, model.dim_x, regime), model.dim_x)
    traj, model, posterior = _posterior(ctx)
    grid = analysis.Grid.centered(posterior.mean, 0.2, args.grid_count)
    pts = grid.points()
    ref_vals = gaussian_pdf(posterior, pts)
    reference = lambda _pts: ref_vals
    kernel = make_kernel(args.kernel, model.dim_x)
    truth_entropy = gaussian_entropy(posterior)

    rows = []
    reports = []
    for k in k_list:
        n = analysis.particles_for_regime(k, model.dim_x, regime)
        cube = kde.Hypercube.for_bandwidth(k, model.dim_x)
        for rep in range(args.replicates):
            seed = ctx.seed + 1 + rep
            cloud = run_filter(model, traj.observations, n, seed)
            est = kde.DensityEstimator(cloud=cloud, kernel=kernel, k=k)
            report = analysis.ErrorReport(k=k, n_particles=n, seed=seed)
            if metric in ("sup", "tvd", "ise", "mise"):
                est_vals = kde.estimate_density(est, pts)
                estimate = lambda _pts: est_vals
                report.sup_error = analysis.sup_error(estimate, reference, grid)
                report.l1_error = analysis.l1_error(estimate, reference, grid)
                report.tvd = analysis.tvd(estimate, reference, grid)
                trunc_vals = np.where(cube.contains(pts), est_vals, 0.0)
                report.ise = analysis.ise(lambda _pts: trunc_vals, reference, grid)
            if metric == "entropy":
                report.entropy_est, _ = analysis.entropy_estimate(est)
                report.entropy_true = truth_entropy
                report.entropy_abs_err = abs(report.entropy_est - truth_entropy)
            reports.append(report)
            rows.append(report.row())

    out = args.out or ctx.path("convergence.csv")
    write_csv(ctx, out, list(analysis.ErrorReport.FIELDS), rows,
              {"cmd": "convergence", "kernel": args.kernel, "metric": metric,
               "regime": regime, "k_list": args.k_list,
               "replicates": args.replicates, "grid_count": args.grid_count})

    # fitted decay rates over k, medians across replicates
    metric_field = {"sup": "sup_error", "tvd": "tvd", "ise": "ise",
                    "mise": "ise", "entropy": "entropy_abs_err"}[metric]
    med = []
    for k in k_list:
        vals = [getattr(r, metric_field) for r in reports if r.k == k]
        agg = float(np.mean(vals)) if metric == "mise" else float(np.median(vals))
        med.append(agg)
    if len(k_list) >= 2:
        slope, r2 = analysis.fit_loglog_slope(k_list, med)
        append_comment(out, f"slope metric={metric} regime={regime} "
                            f"value={slope!r} r2={r2!r}")


def cmd_figure1(ctx: RunContext, args) -> None:
    model = ctx.config.build()
    k_list = _parse_int_list(args.k_list, "--k-list") if args.k_list else list(FIGURE1_KS)
    for k in k_list:
        _check_memory(_default_n(k, model.dim_x), model.dim_x,
                      args.grid_count**model.dim_x)
    traj, model, posterior = _posterior(ctx)
    grid = analysis.Grid.centered(posterior.mean, args.grid_step, args.grid_count)
    pts = grid.points()
    p_true = gaussian_pdf(posterior, pts)
    params = {"cmd": "figure1", "kernel": args.kernel,
              "grid_step": args.grid_step, "grid_count": args.grid_count}
    for k in k_list:
        n = _default_n(k, model.dim_x)
        cloud = run_filter(model, traj.observations, n, ctx.seed + 1)
        est = kde.DensityEstimator(
            cloud=cloud, kernel=make_kernel(args.kernel, model.dim_x), k=k)
        p_hat = kde.estimate_density(est, pts)
        rows = zip(pts[:, 0], pts[:, 1], p_hat, p_true, np.abs(p_hat - p_true))
        write_csv(ctx, ctx.path(f"figure1_k{k}.csv"),
                  ["x1", "x2", "p_hat", "p_true", "abs_err"], rows,
                  {**params, "k": k, "n": n})
    rows = zip(pts[:, 0], pts[:, 1], p_true, p_true, np.zeros(len(pts)))
    write_csv(ctx, ctx.path("figure1_exact.csv"),
              ["x1", "x2", "p_hat", "p_true", "abs_err"], rows,
              {**params, "k": "exact"})


def cmd_table1(ctx: RunContext, args) -> None:
    model = ctx.config.build()
    k_list = _parse_int_list(args.k_list, "--k-list") if args.k_list else list(TABLE1_KS)
    x0 = _parse_float_list(args.x0, "--x0")
    for k in k_list:
        _check_memory(_default_n(k, model.dim_x), model.dim_x)
    traj, model, posterior = _posterior(ctx)
    p_max = gaussian_pdf(posterior, posterior.mean)
    kernel = make_kernel(args.kernel, model.dim_x)
    rows = []
    for k in k_list:
        n = _default_n(k, model.dim_x)
        for rep in range(args.replicates):
            seed = ctx.seed + 1 + rep
            cloud = run_filter(model, traj.observations, n, seed)
            est = kde.DensityEstimator(cloud=cloud, kernel=kernel, k=k)
            gap_grad, gap_particle = map_search.map_report(
                est, posterior, step=args.step, x0=x0)
            rows.append([k, seed, p_max, gap_grad, gap_particle])
    out = args.out or ctx.path("table1.csv")
    write_csv(ctx, out, ["k", "seed", "p_true_max", "gap_grad", "gap_particle"],
              rows, {"cmd": "table1", "kernel": args.kernel,
                     "k_list": ",".join(map(str, k_list)),
                     "replicates": args.replicates, "step": args.step,
                     "x0": args.x0})


def cmd_table2(ctx: RunContext, args) -> None:
    model = ctx.config.build()
    k_list = _parse_int_list(args.k_list, "--k-list") if args.k_list else list(TABLE2_KS)
    for k in k_list:
        _check_memory(_default_n(k, model.dim_x), model.dim_x)
    traj, model, posterior = _posterior(ctx)
    truth = gaussian_entropy(posterior)
    kernel = make_kernel(args.kernel, model.dim_x)
    rows = []
    summary = []
    for k in k_list:
        n = _default_n(k, model.dim_x)
        errs = []
        for rep in range(args.replicates):
            seed = ctx.seed + 1 + rep
            cloud = run_filter(model, traj.observations, n, seed)
            est = kde.DensityEstimator(cloud=cloud, kernel=kernel, k=k)
            value, _ = analysis.entropy_estimate(est)
            err = abs(value - truth)
            errs.append(err)
            rows.append([k, seed, value, truth, err])
        summary.append([k, "mean", None, None, float(np.mean(errs))])
        summary.append([k, "std", None, None, float(np.std(errs, ddof=1))
                        if len(errs) > 1 else 0.0])
    out = args.out or ctx.path("table2.csv")
    write_csv(ctx, out, ["k", "seed", "entropy_est", "entropy_true", "abs_err"],
              rows + summary,
              {"cmd": "table2", "kernel": args.kernel,
               "k_list": ",".join(map(str, k_list)),
               "replicates": args.replicates})


# --- argument wiring --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted both before and after the subcommand; the
    # suppressed defaults keep subcommand parsing from clobbering values
    # already read by the top-level parser
    common = argparse.ArgumentParser(add_help=False,
                                     argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key=value model file (keys A, B, T, seed)")
    common.add_argument("--seed", type=int, help="trajectory seed (overrides config)")
    common.add_argument("--threads", type=int,
                        help="worker threads; 1 guarantees serial-identical output")
    common.add_argument("--out-dir", help="directory for outputs")

    parser = argparse.ArgumentParser(
        prog="pfkde",
        description="Particle filtering with kernel density estimates of the posterior.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, parents=[common], **kwargs)
        p.set_defaults(fn=fn)
        return p

    p = add("simulate", cmd_simulate, help="simulate a trajectory and dump it")
    p.add_argument("--out")

    p = add("filter", cmd_filter, help="run the bootstrap filter, dump the final cloud")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--filter-seed", type=int, default=None)
    p.add_argument("--resampler", choices=("multinomial", "systematic"),
                   default="multinomial")
    p.add_argument("--dump-cloud")
    p.add_argument("--dump-kalman")

    p = add("density-grid", cmd_density_grid, help="kernel density estimate on a grid")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--kernel", choices=KERNEL_NAMES, default="epanechnikov")
    p.add_argument("--n", type=int)
    p.add_argument("--filter-seed", type=int, default=None)
    p.add_argument("--grid-offset")
    p.add_argument("--grid-step", type=float, default=0.2)
    p.add_argument("--grid-count", type=int, default=42)
    p.add_argument("--out")

    p = add("map", cmd_map, help="gradient ascent on the estimated density")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--kernel", choices=KERNEL_NAMES, default="gaussian")
    p.add_argument("--n", type=int)
    p.add_argument("--filter-seed", type=int, default=None)
    p.add_argument("--x0", default="-2,-2")
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--out")

    p = add("entropy", cmd_entropy, help="plug-in entropy against the exact value")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--kernel", choices=KERNEL_NAMES, default="epanechnikov")
    p.add_argument("--n", type=int)
    p.add_argument("--filter-seed", type=int, default=None)
    p.add_argument("--out")

    p = add("convergence", cmd_convergence, help="error metrics over a k ladder")
    p.add_argument("--k-list", required=True)
    p.add_argument("--kernel", choices=KERNEL_NAMES, default="epanechnikov")
    p.add_argument("--replicates", type=int, default=DEFAULT_REPLICATES)
    p.add_argument("--metric", choices=("sup", "tvd", "ise", "mise", "entropy"),
                   default="sup")
    p.add_argument("--regime", choices=("thm4", "thm6"), default="thm4")
    p.add_argument("--grid-count", type=int, default=54)
    p.add_argument("--out")

    p = add("figure1", cmd_figure1, help="density grids for k in {4,7,10} plus truth")
    p.add_argument("--k-list")
    p.add_argument("--kernel", choices=KERNEL_NAMES, default="epanechnikov")
    p.add_argument("--grid-step", type=float, default=0.2)
    p.add_argument("--grid-count", type=int, default=42)

    p = add("table1", cmd_table1, help="MAP value gaps, 30 seeds per k")
    p.add_argument("--k-list")
    p.add_argument("--kernel", choices=KERNEL_NAMES, default="gaussian")
    p.add_argument("--replicates", type=int, default=DEFAULT_REPLICATES)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--x0", default="-2,-2")
    p.add_argument("--out")

    p = add("table2", cmd_table2, help="entropy errors, 30 seeds per k")
    p.add_argument("--k-list")
    p.add_argument("--kernel", choices=KERNEL_NAMES, default="gaussian")
    p.add_argument("--replicates", type=int, default=DEFAULT_REPLICATES)
    p.add_argument("--out")

    return parser


# flags whose values may start with a minus sign (coordinates)
_NEGATIVE_VALUE_FLAGS = ("--x0", "--grid-offset")


def _merge_negative_values(argv):
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in _NEGATIVE_VALUE_FLAGS and i + 1 < len(argv) \
                and argv[i + 1].startswith("-"):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(_merge_negative_values(list(argv)))
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0

    try:
        config_path = getattr(args, "config", None)
        if config_path:
            if not os.path.exists(config_path):
                raise CliError(f"config file not found: {config_path}")
            config = parse_model_config(config_path)
        else:
            config = default_config()
        seed = getattr(args, "seed", None)
        if seed is None:
            seed = config.seed
        threads = getattr(args, "threads", None)
        if threads is None:
            threads = 1
        if threads < 1:
            raise CliError("--threads must be >= 1")
        if getattr(args, "filter_seed", None) is None and hasattr(args, "filter_seed"):
            args.filter_seed = seed + 1
        ctx = RunContext(config=config, seed=seed, threads=threads,
                         out_dir=getattr(args, "out_dir", None) or ".",
                         written=[])
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        args.fn(ctx, args)
    except CliError as exc:
        _cleanup(ctx)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        _cleanup(ctx)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _cleanup(ctx: RunContext):
    for path in ctx.written:
        try:
            os.remove(path)
        except OSError:
            pass


if __name__ == "__main__":
    sys.exit(main())
