"""Command-line interface: fit, infer, simulate, benchmark, export-plots."""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np
from scipy import stats as sps

from . import __version__
from .core import STATE_NAMES, STATE_SYMBOLS, ValidationError, compute_sufficient_stats
from .em import FitError, e_step, fit_model
from .inference import call, cluster_by_path, estimate_fdr, posterior_mean_curve
from .io import OutputBatch, build_config, dataset_tables, ingest_tsv, read_params
from .likelihood import all_path_moments
from .params import default_simulation_params
from .simulation import BenchmarkConfig, run_benchmark, simulate_dataset

log = logging.getLogger("timestate")

_CONFIG_FLAGS = {
    "order": "order", "criterion": "criterion", "rel_tol": "rel_tol",
    "max_iters": "max_iters", "threads": "threads", "seed": "seed",
    "deterministic": "deterministic", "multi_start": "multi_start",
    "mean_update": "mean_update", "genes": "genes", "replicates": "replicates",
    "time_labels": "time_labels", "replications": "replications", "methods": "methods",
    "baseline_mean": "baseline_mean", "baseline_sd": "baseline_sd",
    "grid_points": "grid_points",
}


def _common(p):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config file (flags take precedence)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def _fit_flags(p):
    p.add_argument("--order", choices=("zero", "first", "full"))
    p.add_argument("--rel-tol", dest="rel_tol", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--multi-start", dest="multi_start", type=int)
    p.add_argument("--mean-update", dest="mean_update", choices=("exact", "pairwise"))


def _sim_flags(p):
    p.add_argument("--genes", type=int)
    p.add_argument("--replicates", help="comma-separated replicate counts, e.g. 4,4,4,4")
    p.add_argument("--time-labels", dest="time_labels", help="comma-separated time labels")
    p.add_argument("--params", dest="params_file", help="parameter JSON (default: built-in)")


def build_parser():
    ap = argparse.ArgumentParser(prog="timestate", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate model parameters by EM")
    p.add_argument("expression")
    p.add_argument("design")
    _common(p)
    _fit_flags(p)

    p = sub.add_parser("infer", help="decode paths, estimate FDR and cluster genes")
    p.add_argument("expression")
    p.add_argument("design")
    p.add_argument("--params", dest="params_file", required=True)
    p.add_argument("--criterion", choices=("mmp", "mjp"))
    _common(p)

    p = sub.add_parser("simulate", help="draw a dataset from the model")
    _common(p)
    _sim_flags(p)
    p.add_argument("--baseline-mean", dest="baseline_mean", type=float)
    p.add_argument("--baseline-sd", dest="baseline_sd", type=float)

    p = sub.add_parser("benchmark", help="compare first-order, zero-order and pairwise calls")
    _common(p)
    _sim_flags(p)
    _fit_flags(p)
    p.add_argument("--replications", type=int)
    p.add_argument("--methods", help="comma-separated subset of first,zero,pairwise")
    p.add_argument("--criterion", choices=("mmp", "mjp"))

    p = sub.add_parser("export-plots", help="write plot-ready density and trajectory tables")
    p.add_argument("--params", dest="params_file", required=True)
    p.add_argument("--expression")
    p.add_argument("--design")
    p.add_argument("--criterion", choices=("mmp", "mjp"))
    p.add_argument("--grid-points", dest="grid_points", type=int)
    _common(p)
    return ap


def _config(args):
    over = {k: getattr(args, a) for k, a in _CONFIG_FLAGS.items() if hasattr(args, a)}
    return build_config(args.config, overrides=over)


def _meta(args, cfg):
    return {"version": f"timestate-{__version__}", "command": args.command, "seed": cfg.seed}


def _period_labels(design):
    tl = design.time_labels
    return [f"{tl[t]}->{tl[t + 1]}" for t in range(design.T - 1)]


# -- subcommands ----------------------------------------------------------------

def cmd_fit(args, cfg):
    ds = ingest_tsv(args.expression, args.design)
    rep = fit_model(ds, cfg.order, cfg.fit_config())
    post = rep.posteriors
    labels = ds.design.time_labels[1:]
    paths = post.paths.labels
    header = (["gene_id", "log_marginal"]
              + [f"pr_{STATE_NAMES[s]}_{lab}" for lab in labels for s in range(3)]
              + [f"path[{p}]" for p in paths])
    rows = []
    for g, gid in enumerate(ds.gene_ids):
        rows.append([gid, post.log_marginal[g]]
                    + list(post.state_marginals[g].ravel()) + list(post.path_probs[g]))
    doc = rep.params.to_dict()
    doc["time_labels"] = list(ds.design.time_labels)
    doc["fit"] = {"order": cfg.order, "iterations": rep.iterations,
                  "converged": rep.converged, "log_likelihood": rep.log_lik_trace[-1],
                  "genes": ds.G, "mean_update": cfg.mean_update}
    with OutputBatch(args.out, _meta(args, cfg)) as out:
        out.json("params.json", doc)
        out.tsv("posteriors.tsv", header, rows)
        out.tsv("trace.tsv", ["iteration", "log_likelihood"], enumerate(rep.log_lik_trace))
    log.info("fit: %d iterations, log-likelihood %.6f", rep.iterations, rep.log_lik_trace[-1])


def _decode(ds, params, cfg):
    stats = compute_sufficient_stats(ds)
    post = e_step(stats, params, n_jobs=cfg.threads)
    cs = estimate_fdr(call(post, cfg.criterion, ds.gene_ids), post)
    _, pm, pv = all_path_moments(stats.centered_means, post.paths, params.obs, params.mean,
                                 stats.design)
    curve = posterior_mean_curve(post, pm, pv)
    return post, cs, cluster_by_path(cs, curve)


def _check_T(ds, params):
    if params.T != ds.T:
        raise ValidationError(f"parameters describe T={params.T}, data have T={ds.T}")


def cmd_infer(args, cfg):
    ds = ingest_tsv(args.expression, args.design)
    params = read_params(args.params_file)
    _check_T(ds, params)
    post, cs, clusters = _decode(ds, params, cfg)
    labels = ds.design.time_labels
    states = cs.states
    header = (["gene_id", "path"] + [f"state_{lab}" for lab in labels[1:]]
              + [f"pr_same_{lab}" for lab in labels[1:]] + ["tde"])
    pl = cs.labels()
    rows = [[gid, pl[g]] + [STATE_SYMBOLS[s] for s in states[g]]
            + list(post.prob_same[g]) + [bool(cs.tde[g])] for g, gid in enumerate(ds.gene_ids)]
    fdr = {
        "criterion": cfg.criterion,
        "n_genes": ds.G,
        "n_tde": cs.n_tde,
        "n_called_per_time": {lab: int(n) for lab, n in
                              zip(labels[1:], cs.tde_per_time.sum(axis=0))},
        "fdr_per_time": dict(zip(labels[1:], cs.fdr_per_time)),
        "fdr_overall": cs.fdr_overall,
    }
    cheader = ["rank", "path", "size"] + [f"centered_{lab}" for lab in labels] + ["genes"]
    crows = [[i + 1, c.label, c.size] + list(c.centered_curve) + [",".join(c.gene_ids)]
             for i, c in enumerate(clusters)]
    with OutputBatch(args.out, _meta(args, cfg)) as out:
        out.tsv("calls.tsv", header, rows)
        out.json("fdr.json", fdr)
        out.tsv("clusters.tsv", cheader, crows)
    log.info("infer: %d TDE genes of %d", cs.n_tde, ds.G)


def _sim_params(args, cfg):
    if getattr(args, "params_file", None):
        params = read_params(args.params_file)
    else:
        params = default_simulation_params()
    if params.T != len(cfg.replicates):
        raise ValidationError(
            f"{len(cfg.replicates)} replicate counts for a {params.T}-time-point model")
    return params


def cmd_simulate(args, cfg):
    params = _sim_params(args, cfg)
    ds, truth = simulate_dataset(params, cfg.genes, cfg.design(), cfg.seed,
                                 cfg.baseline_mean, cfg.baseline_sd)
    (eh, er), (dh, dr) = dataset_tables(ds)
    labels = ds.design.time_labels
    th = ["gene_id", "path"] + [f"mu_{lab}" for lab in labels]
    paths = truth.paths.labels
    tr = [[gid, paths[truth.path_index[g]]] + list(truth.true_means[g])
          for g, gid in enumerate(ds.gene_ids)]
    with OutputBatch(args.out, _meta(args, cfg)) as out:
        out.tsv("expression.tsv", eh, er)
        out.tsv("design.tsv", dh, dr)
        out.tsv("truth.tsv", th, tr)


_METRICS = ("sensitivity", "specificity", "fdr", "mr", "fdr_estimated")


def _metric_rows(reports, periods, reducer):
    rows = []
    for method, rep in reports.items():
        for name in _METRICS:
            if name in ("fdr_estimated",) and name not in rep.extra:
                continue
            for p, lab in enumerate(periods):
                rows.append([method, name, lab] + reducer(rep, name, p))
        rows.append([method, "smr", "all"] + reducer(rep, "smr", None))
        for name in ("mse_posterior", "mse_raw"):
            if name in rep.extra:
                rows.append([method, name, "all"] + reducer(rep, name, None))
    return rows


def _agg(rep, name, p):
    m, s = rep.mean(name), rep.sd(name)
    if p is not None:
        m, s = m[p], s[p]
    return [float(m), float(s), rep.replications]


def cmd_benchmark(args, cfg):
    params = _sim_params(args, cfg)
    bc = BenchmarkConfig(methods=tuple(cfg.methods), replications=cfg.replications,
                         G=cfg.genes, design=cfg.design(), params=params, seed=cfg.seed,
                         criterion=cfg.criterion, fit=cfg.fit_config())
    periods = _period_labels(cfg.design())
    def single(rep, name, p):
        v = rep.extra[name] if name in rep.extra else getattr(rep, name)
        return [float(v[0] if p is None else v[0][p])]

    out = OutputBatch(args.out, _meta(args, cfg))
    with out:
        def persist(r, seed, res):
            out.tsv(f"replication_{r + 1:03d}.tsv",
                    ["method", "metric", "period", "value", "seed"],
                    [row + [seed] for row in _metric_rows(res, periods, single)])

        result = run_benchmark(bc, on_replication=persist)
        out.tsv("benchmark.tsv", ["method", "metric", "period", "mean", "sd", "replications"],
                _metric_rows(result.reports, periods, _agg))
        out.tsv("seeds.tsv", ["replication", "seed"],
                [[r + 1, s] for r, s in enumerate(result.seeds)])


def _density_grid(params, n):
    eta, tau = params.mean.eta, params.mean.tau
    lim = float(np.max(np.abs(eta) + 4.0 * tau))
    x = np.linspace(-lim, lim, n)
    rows = []
    for p in range(eta.shape[0]):
        for c, name in ((0, "up"), (1, "down")):
            e, t = eta[p, c], tau[p, c]
            a, b = ((0.0 - e) / t, np.inf) if c == 0 else (-np.inf, (0.0 - e) / t)
            dens = sps.truncnorm.pdf(x, a, b, loc=e, scale=t)
            rows.extend([p, name, xi, di] for xi, di in zip(x, dens))
    return rows


def cmd_export_plots(args, cfg):
    params = read_params(args.params_file)
    rows = _density_grid(params, cfg.grid_points)
    traj = None
    if args.expression or args.design:
        if not (args.expression and args.design):
            raise ValidationError("--expression and --design must be given together")
        ds = ingest_tsv(args.expression, args.design)
        _check_T(ds, params)
        periods = _period_labels(ds.design)
        rows = [[periods[r[0]]] + r[1:] for r in rows]
        _, _, clusters = _decode(ds, params, cfg)
        traj = [[i + 1, c.label, c.size, lab, v]
                for i, c in enumerate(clusters)
                for lab, v in zip(ds.design.time_labels, c.centered_curve)]
    else:
        rows = [[f"period{r[0] + 1}"] + r[1:] for r in rows]
    with OutputBatch(args.out, _meta(args, cfg)) as out:
        out.tsv("densities.tsv", ["period", "direction", "x", "density"], rows)
        if traj is not None:
            out.tsv("trajectories.tsv", ["rank", "path", "size", "time", "centered_mean"], traj)


COMMANDS = {"fit": cmd_fit, "infer": cmd_infer, "simulate": cmd_simulate,
            "benchmark": cmd_benchmark, "export-plots": cmd_export_plots}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (ValidationError, FitError, OSError, ValueError, KeyError) as exc:
        print(f"timestate {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
