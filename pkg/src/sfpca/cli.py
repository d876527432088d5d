"""Command-line interface: fit, select, diagnose, predict, simulate, run-grid.

Exit codes: 0 success, 1 error, 2 finished with convergence warnings.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import outputs as out
from .data import load_csv, write_csv
from .fit import fit_sfpca
from .nuts import SamplerConfig
from .predict import fitted_curves, replicate, subject_trajectory
from .psis import KHAT_BAD
from .selection import GridError, parse_range, select_models, validate_grid
from .simulate import default_truth, generate, load_truth, save_truth
from .study import RESULT_FIELDS, failure_rate, run_grid, scenario_grid, summarize_grid

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2

logger = logging.getLogger("sfpca")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers


def read_config(path) -> dict:
    """Parse a ``key = value`` file; '#' starts a comment, quotes are stripped."""
    cfg = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or line.startswith("["):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if len(val) >= 2 and val[0] == val[-1] and val[0] in "\"'":
            val = val[1:-1]
        cfg[key.replace("-", "_")] = val
    return cfg


def resolve_seed(seed) -> int:
    if seed is not None:
        return int(seed)
    seed = int(np.random.SeedSequence().entropy % (2 ** 63))
    print(f"seed: {seed}", file=sys.stderr)
    return seed


def sampler_config(args, seed: int) -> SamplerConfig:
    return SamplerConfig(chains=args.chains, warmup=args.warmup, iters=args.iters, seed=seed,
                         target_accept=args.target_accept, max_treedepth=args.max_treedepth)


def write_table(path, header, rows):
    return out.write_rows(path, header, rows)


def write_curves(fit_like, out_dir: Path, fmt: str, grid_size: int) -> None:
    """mean_curve.csv, pc_curves.csv, scores.csv and khat.csv (plus SVGs)."""
    rotated, prepared, loo, basis = fit_like
    cs = fitted_curves(rotated, basis, prepared.standardization, grid_size, prepared.time_scale)
    write_table(out_dir / "mean_curve.csv", *out.mean_curve_rows(cs))
    write_table(out_dir / "pc_curves.csv", *out.pc_curve_rows(cs))
    write_table(out_dir / "scores.csv", *out.score_rows(rotated, prepared.data.subject_ids))
    write_table(out_dir / "khat.csv", *out.khat_rows(loo))
    if fmt == "svg":
        out.svg_mean_curve(cs, out_dir / "mean_curve.svg")
        out.svg_pc_curves(cs, out_dir / "pc_curves.svg")
        out.svg_khat(loo, out_dir / "khat.svg")


def _single(text, name) -> int:
    vals = parse_range(text)
    if len(vals) != 1:
        raise ConfigError(f"--{name} takes a single value for this command")
    return vals[0]


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    k, m = _single(args.pcs, "pcs"), _single(args.knots, "knots")
    validate_grid([k], [m])
    seed = resolve_seed(args.seed)
    data = load_csv(args.data)
    config = sampler_config(args, seed)
    fit = fit_sfpca(data, k, n_knots=m, config=config, knot_method=args.knot_method,
                    loo_unit=args.loo_unit, loo_likelihood=args.loo_likelihood)
    out_dir = Path(args.out)
    write_curves((fit.rotated, fit.prepared, fit.loo, fit.basis), out_dir, args.format, args.grid_size)
    out.save_fit(fit, out_dir, seed, {"command": "fit", "data_path": str(args.data),
                                      "loo_options": {"unit": args.loo_unit, "likelihood": args.loo_likelihood}})
    rhat = fit.convergence["max_rhat"]
    rhat_txt = "n/a" if rhat is None else f"{rhat:.3f}"
    print(f"fit pcs={k} knots={m}: elppd {fit.loo.elppd:.2f} (SE {fit.loo.se:.2f}), "
          f"max R-hat {rhat_txt}, {fit.loo.n_bad} k-hat > {KHAT_BAD}")
    for w in fit.warnings + fit.loo_warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_WARN if fit.warnings else EXIT_OK


def cmd_select(args) -> int:
    pcs, knots = parse_range(args.pcs), parse_range(args.knots)
    validate_grid(pcs, knots)
    seed = resolve_seed(args.seed)
    data = load_csv(args.data)
    config = sampler_config(args, seed)
    root = Path(args.out)

    def persist(cell):
        if cell.fit is None:
            return
        d = root / f"pcs{cell.k}_knots{cell.n_knots}"
        write_curves((cell.fit.rotated, cell.fit.prepared, cell.fit.loo, cell.fit.basis), d, args.format,
                     args.grid_size)
        out.save_fit(cell.fit, d, cell.seed, {"command": "select", "data_path": str(args.data)})
        print(f"  pcs={cell.k} knots={cell.n_knots}: elppd {cell.fit.loo.elppd:.2f}"
              + (f" [excluded: {cell.reason}]" if cell.failed else ""), file=sys.stderr)

    sel = select_models(data, pcs, knots, config, knot_method=args.knot_method, on_cell=persist,
                        loo_unit=args.loo_unit, loo_likelihood=args.loo_likelihood)
    failed = [c for c in sel.cells if c.failed]
    header = ["pcs", "knots", "elppd", "se", "delta", "se_delta", "tied", "n_bad_khat", "failed"]
    rows = [[r["pcs"], r["knots"], r["elppd"], r["se"], r["delta"], r["se_delta"], int(r["tied"]),
             r["n_bad_khat"], ""] for r in sel.table]
    rows += [[c.k, c.n_knots, "", "", "", "", "", "", c.reason] for c in failed]
    write_table(root / "comparison.csv", header, rows)
    doc = {"schema_version": out.SCHEMA_VERSION, "timestamp": out.utc_timestamp(), "seed": seed,
           "table": out._jsonable(sel.table),
           "failed": [{"pcs": c.k, "knots": c.n_knots, "reason": c.reason} for c in failed],
           "recommended": None if sel.recommended is None else {"pcs": sel.recommended.k,
                                                                 "knots": sel.recommended.n_knots},
           "best": None if sel.best is None else {"pcs": sel.best.k, "knots": sel.best.n_knots}}
    out.write_json(root / "selection.json", doc)

    print(f"{'pcs':>4} {'knots':>5} {'elppd':>10} {'delta':>8} {'se_delta':>8} {'tied':>5} {'bad_k':>5}")
    for r in sel.table:
        print(f"{r['pcs']:>4} {r['knots']:>5} {r['elppd']:>10.2f} {r['delta']:>8.2f} {r['se_delta']:>8.2f} "
              f"{('yes' if r['tied'] else 'no'):>5} {r['n_bad_khat']:>5}")
    for c in failed:
        print(f"{c.k:>4} {c.n_knots:>5}  failed: {c.reason}")
    if sel.recommended is None:
        print("error: every grid cell failed", file=sys.stderr)
        return EXIT_ERROR
    print(f"recommended: pcs={sel.recommended.k} knots={sel.recommended.n_knots}")
    return EXIT_WARN if failed or any(c.fit.warnings for c in sel.cells if c.fit is not None) else EXIT_OK


def _fit_dir(args) -> Path:
    return Path(args.fit_dir)


def cmd_diagnose(args) -> int:
    lf = out.load_fit(_fit_dir(args))
    seed = int(args.seed) if args.seed is not None else int(lf.meta["seed"])
    dest = Path(args.out) if args.out else lf.path / "diagnostics"
    write_table(dest / "khat.csv", *out.khat_rows(lf.loo))
    ppc = replicate(lf.spec, lf.flat(), R=args.replicates, seed=seed)
    write_table(dest / "ppc_density.csv", *out.ppc_rows(ppc))
    if args.format == "svg":
        out.svg_khat(lf.loo, dest / "khat.svg")
        out.svg_ppc(ppc, dest / "ppc_density.svg")
    flagged = [lf.loo.unit_ids[i] for i in lf.loo.flagged] if lf.loo.unit == "subject" else []
    grid = np.linspace(0, 1, args.grid_size)
    for sid in flagged:
        tr = subject_trajectory(lf.spec, lf.flat(), lf.prepared.data, sid, grid, lf.prepared.standardization,
                                lf.prepared.time_scale, with_noise=args.with_noise, seed=seed)
        write_table(dest / f"subject_{out.safe_name(sid)}_trajectory.csv", *out.trajectory_rows(tr))
        if args.format == "svg":
            out.svg_trajectory(tr, dest / f"subject_{out.safe_name(sid)}_trajectory.svg")
    print(f"{len(flagged)} subjects with k-hat > {KHAT_BAD}; PPC envelope coverage "
          f"{ppc.envelope_coverage():.3f} over {ppc.R} replicates")
    return EXIT_OK


def cmd_predict(args) -> int:
    lf = out.load_fit(_fit_dir(args))
    seed = int(args.seed) if args.seed is not None else int(lf.meta["seed"])
    dest = Path(args.out) if args.out else lf.path / "predict"
    rotated = lf.rotated()
    write_curves((rotated, lf.prepared, lf.loo, lf.spec.basis), dest, args.format, args.grid_size)
    ids = args.subject or lf.prepared.data.subject_ids
    grid = np.linspace(0, 1, args.grid_size)
    for sid in ids:
        tr = subject_trajectory(lf.spec, lf.flat(), lf.prepared.data, sid, grid, lf.prepared.standardization,
                                lf.prepared.time_scale, with_noise=args.with_noise, seed=seed)
        write_table(dest / f"subject_{out.safe_name(sid)}_trajectory.csv", *out.trajectory_rows(tr))
        if args.format == "svg":
            out.svg_trajectory(tr, dest / f"subject_{out.safe_name(sid)}_trajectory.svg")
    print(f"wrote curves and {len(ids)} subject trajectories to {dest}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    truth = load_truth(args.truth) if args.truth else default_truth()
    seed = resolve_seed(args.seed)
    truth = truth.with_scenario(N=args.n, missing=args.missing, seed=seed)
    sim = generate(truth)
    dest = Path(args.out)
    dest.mkdir(parents=True, exist_ok=True)
    tmp = dest / ".data.csv.tmp"
    write_csv(sim.data, tmp)
    tmp.replace(dest / "data.csv")
    save_truth(truth, dest / ".truth.json.tmp")
    (dest / ".truth.json.tmp").replace(dest / "truth.json")
    write_table(dest / "scores.csv", ["subject", "component", "score"],
                [[sid, j + 1, sim.alpha[i, j]] for i, sid in enumerate(sim.data.subject_ids)
                 for j in range(truth.k)])
    print(f"simulated {sim.data.n_subjects} subjects, {sim.data.n_total} observations "
          f"({100 * (1 - sim.data.n_total / (truth.N * truth.N_T)):.1f}% missing)")
    return EXIT_OK


def cmd_run_grid(args) -> int:
    truth = load_truth(args.truth) if args.truth else default_truth()
    Ns = [int(v) for v in str(args.n).split(",")]
    miss = [float(v) for v in str(args.missing).split(",")]
    seed = resolve_seed(args.seed)
    scen = scenario_grid(truth, Ns, miss)
    dest = Path(args.out)

    def show(row):
        print(f"  scenario {row['scenario']} rep {row['rep']}: {row['status']}", file=sys.stderr)

    rows = run_grid(scen, args.reps, seed, sampler_config(args, seed), on_row=show)
    write_table(dest / "sim_results.csv", RESULT_FIELDS, [[r[f] for f in RESULT_FIELDS] for r in rows])
    summary = summarize_grid(rows)
    if summary:
        keys = list(summary[0])
        write_table(dest / "sim_summary.csv", keys, [[s[k] for k in keys] for s in summary])
        for s in summary:
            print(f"N={s['N']:>4} missing={s['missing']:.2f}: MSE(mean) {s['MSE_mean']:.4f} "
                  f"MSE(fpc) {s['MSE_fpc']:.4f} ({s['reps']} reps)")
    rate = failure_rate(rows)
    print(f"failure rate {rate:.3f}")
    if rows and rate == 1.0:
        return EXIT_ERROR
    return EXIT_WARN if rate > 0 or any(r["status"] == "warning" for r in rows) else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _sampling_flags(p):
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-treedepth", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)


def _model_flags(p, grid: bool):
    p.add_argument("--data", required=True)
    p.add_argument("--pcs", default="1:3" if grid else "2")
    p.add_argument("--knots", default="1:3" if grid else "1")
    p.add_argument("--knot-method", choices=["quantile", "uniform"], default="quantile")
    p.add_argument("--loo-unit", choices=["subject", "observation"], default="subject")
    p.add_argument("--loo-likelihood", choices=["marginal", "conditional"], default="marginal")


def _output_flags(p, required=True):
    p.add_argument("--out", required=required, default=None)
    p.add_argument("--format", choices=["csv", "svg"], default="csv")
    p.add_argument("--grid-size", type=int, default=101)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfpca", description="Bayesian sparse functional PCA")
    parser.add_argument("--config", help="key = value file of defaults; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one (pcs, knots) model")
    _model_flags(p, grid=False)
    _sampling_flags(p)
    _output_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="fit a pcs x knots grid and recommend a model")
    _model_flags(p, grid=True)
    _sampling_flags(p)
    _output_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("diagnose", help="k-hat table, posterior predictive densities, flagged subjects")
    p.add_argument("fit_dir")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--with-noise", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    _output_flags(p, required=False)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("predict", help="mean/component curves and subject trajectories")
    p.add_argument("fit_dir")
    p.add_argument("--subject", action="append", help="subject id (repeatable; default all)")
    p.add_argument("--with-noise", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    _output_flags(p, required=False)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="draw a synthetic dataset from a truth file")
    p.add_argument("--truth", help="truth JSON (default: shipped truth)")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--missing", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run-grid", help="repeated simulate-fit-score over N x missingness")
    p.add_argument("--truth")
    p.add_argument("--n", default="25,50,100", help="comma-separated subject counts")
    p.add_argument("--missing", default="0,0.8", help="comma-separated missing fractions")
    p.add_argument("--reps", type=int, default=20)
    _sampling_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run_grid)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    if known.config and command:
        cfg = read_config(known.config)
        subparser = choices[command]
        dests = {a.dest: a for a in subparser._actions}
        unknown = sorted(set(cfg) - set(dests))
        if unknown:
            raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
        defaults = {}
        for key, val in cfg.items():
            act = dests[key]
            if isinstance(act, argparse._StoreTrueAction):
                defaults[key] = val.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    defaults[key] = act.type(val) if act.type else val
                except ValueError:
                    raise ConfigError(f"bad value for {key}: {val!r}") from None
            act.required = False
        subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (GridError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
