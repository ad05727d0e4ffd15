"""Command line entry point: ``popjump <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import calibration, harness
from .model import check_ergodicity
from .solver import solve_stationary


def _floats(text: str) -> list[float]:
    """Comma-separated numbers; ``1/128`` style fractions are accepted."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "/" in part:
            a, b = part.split("/")
            out.append(float(a) / float(b))
        else:
            out.append(float(part))
    if not out:
        raise argparse.ArgumentTypeError("empty value list")
    return out


def _outdir(args, sc=None) -> Path:
    d = Path(args.out or (sc.output_dir if sc is not None and sc.output_dir else "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dump(obj, path: Path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def cmd_simulate(args):
    sc = harness.load_scenario(args.config)
    out = _outdir(args, sc)
    rep = harness.run_scenario(sc, out_dir=out, solve=False, write_events=args.events)
    print(rep.to_json())
    return 0


def cmd_solve(args):
    sc = harness.load_scenario(args.config)
    out = _outdir(args, sc)
    header = f"# seed={sc.seed} config_hash={sc.config_hash()}\n"
    summary = []
    for i, inf in enumerate(sc.influencers):
        d = solve_stationary(sc.system, inf, sc.solver.grid(sc.system, inf),
                             sc.solver.tol, sc.solver.max_iter)
        name = "pdf.csv" if len(sc.influencers) == 1 else f"pdf_{i}.csv"
        harness._with_header(out / name, header, d.to_csv)
        diag = dict(d.diagnostics, seed=sc.seed, config_hash=sc.config_hash())
        diag.pop("seconds", None)
        _dump(diag, out / f"solver_{i}.json")
        summary.append({"influencer": i, "mean": d.mean(), "iterations": d.diagnostics["iterations"],
                        "balance_residual": d.diagnostics["balance_residual"]})
    print(json.dumps(summary, indent=2))
    return 0


def cmd_validate(args):
    sc = harness.load_scenario(args.config)
    res = harness.validate(sc, threshold=args.threshold)
    out = _outdir(args, sc)
    body = dict(res.as_dict(), seed=sc.seed, config_hash=sc.config_hash())
    _dump(body, out / "validation.json")
    print(json.dumps(body, indent=2))
    return 0 if res.passed else 1


def cmd_sweep(args):
    sc = harness.load_scenario(args.config)
    out = _outdir(args, sc)
    spec = harness.SweepSpec(args.param, tuple(args.values), sc)
    rows = harness.sweep(spec, out_path=out / "sweep.csv")
    failed = [r for r in rows if r["error"]]
    values, m = harness.sweep_matrix(rows)
    for v, row in zip(values, m):
        print(f"{args.param}={v:g}: pi1 = " + " ".join(f"{p:.3f}" for p in row))
    return 1 if failed else 0


def cmd_table3(args):
    sc = harness.load_scenario(args.config)
    out = _outdir(args, sc)
    res = harness.table3_experiment(phis=args.phis, base=sc, lambda0=args.lambda0,
                                    target_rate=args.rate, horizon=sc.horizon,
                                    replicas=sc.replicas, seed=sc.seed)
    header = f"# seed={sc.seed} config_hash={sc.config_hash()}\n"
    res.to_csv(out / "table3.csv", header)
    _dump(dict(res.as_dict(), seed=sc.seed, config_hash=sc.config_hash()), out / "table3.json")
    print("influencer " + " ".join(f"phi={p:<5g}" for p in res.phis))
    for i, row in enumerate(res.pi1):
        print(f"{i + 1:>10} " + " ".join(f"{v:9.3f}" for v in row))
    return 0


def cmd_calibrate(args):
    data = calibration.read_posts_csv(args.posts)
    out = _outdir(args)
    gs = calibration.grid_search_system_params(data, args.gamma_grid, args.theta_grid)
    gs.to_csv(out / "kappa_surface.csv")
    reports = [calibration.fit_report(ds, gs.gamma, gs.theta) for ds in data]
    _dump({"gamma": gs.gamma, "theta": gs.theta, "kappa_sum": float(gs.surface.min()),
           "influencers": reports}, out / "fit_report.json")
    print(f"gamma* = {gs.gamma:.6g} (1/gamma = {1 / gs.gamma:.4g} days), theta* = {gs.theta:g}")
    for r in reports:
        print(f"{r['influencer_id']}: {r['chosen_family']} beta={r['beta_hat']:.4g} "
              f"cv={r['cv_hat']:.4g} kappa={r['kappa'][r['chosen_family']]:.4f}")
    return 0


def cmd_synthesize(args):
    data = calibration.synthetic_corpus(gamma=args.gamma, theta=args.theta, cv=args.cv,
                                        n_posts=args.posts, seed=args.seed,
                                        pause_days=args.pause_days)
    calibration.write_posts_csv(data, args.output)
    print(f"wrote {len(data)} influencers x {args.posts} posts to {args.output}")
    return 0


def cmd_check(args):
    sc = harness.load_scenario(args.config)
    rows = []
    for i, inf in enumerate(sc.influencers):
        v = check_ergodicity(sc.system, inf)
        rows.append({"influencer": i, "status": v.status.value, "detail": v.detail})
    print(json.dumps(rows, indent=2, default=float))
    return 0 if all(r["status"] != "NotGuaranteed" for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="popjump", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config", help="scenario JSON file")
        sp.add_argument("--out", help="output directory (default: config output_dir or .)")
        sp.set_defaults(func=func)
        return sp

    sp = with_config("simulate", cmd_simulate, "simulate a scenario and report metrics")
    sp.add_argument("--events", action="store_true", help="also write events.csv (replica 0)")
    with_config("solve", cmd_solve, "solve the stationary equation for each influencer")
    sp = with_config("validate", cmd_validate, "compare Monte Carlo and solver distributions")
    sp.add_argument("--threshold", type=float, default=harness.KS_THRESHOLD)
    sp = with_config("sweep", cmd_sweep, "run a one-parameter sweep")
    sp.add_argument("--param", required=True, help="e.g. system.gamma, shared.cv, shared.lambda1")
    sp.add_argument("--values", required=True, type=_floats, help="comma-separated values")
    sp = with_config("table3", cmd_table3, "first-place probabilities with adapted lambda1")
    sp.add_argument("--phis", type=_floats, default=list(harness.TABLE3_PHIS))
    sp.add_argument("--lambda0", type=float, default=1.0)
    sp.add_argument("--rate", type=float, default=4.0, help="target posts per day")
    with_config("check", cmd_check, "ergodicity check per influencer")

    sp = sub.add_parser("calibrate", help="fit gamma and theta to a posts CSV")
    sp.add_argument("posts", help="CSV with influencer_id, timestamp, likes")
    sp.add_argument("--gamma-grid", type=_floats, default=_floats("1/32,1/64,1/128,1/256,1/512"))
    sp.add_argument("--theta-grid", type=_floats, default=_floats("0.5,0.6,0.7,0.8,0.9"))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("synthesize", help="write a synthetic posts CSV")
    sp.add_argument("output")
    sp.add_argument("--gamma", type=float, default=1 / 128)
    sp.add_argument("--theta", type=float, default=0.7)
    sp.add_argument("--cv", type=float, default=0.5)
    sp.add_argument("--posts", type=int, default=10_000)
    sp.add_argument("--pause-days", type=float, default=730.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synthesize)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except harness.ConfigError as exc:
        print(f"config error at {exc.key}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
