"""Command-line interface: ``gpdm-bayes <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import COORDS, ConfigError, compile_field, apply_overrides, apply_scale, list_presets, load_preset, parse_config
from .experiment import build_problem, build_setup, default_output_root, run_experiment
from .forward import write_node_csv
from .geometry import construct_ghost_points, generate_geometry, read_cloud_csv, write_cloud_csv, write_ghosts_csv
from .gpdm import check_sign_convention, gpdm_operator
from .graph_ops import (
    DEFAULT_EPS_GRID,
    GraphOperator,
    calibrate_epsilon,
    self_tuned_laplacian,
    spectral_decompose,
    truncated_laplacian,
    weighted_laplacian,
    write_operator,
    write_spectrum_csv,
)
from .inference import Chain, read_chain_csv, summarize, write_summary_csv
from .prior import write_samples_csv

log = logging.getLogger("gpdm_bayes")


class CliError(RuntimeError):
    pass


# -- config plumbing -------------------------------------------------------------


def _add_config_args(p: argparse.ArgumentParser, scale: bool = False) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--preset", help="name of a shipped preset (see list-presets)")
    g.add_argument("--config", type=Path, help="path to a JSON experiment config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry by dotted key, e.g. prior.tau=0.3")
    if scale:
        p.add_argument("--scale", type=float, default=1.0, help="desk-scale factor in (0, 1]")
        p.add_argument("--iters", type=int, help="total iterations (burn-in keeps its fraction)")


def _load(args, required: bool = True):
    if args.preset:
        cfg = load_preset(args.preset)
    elif args.config:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", source=str(args.config)) from None
        cfg = parse_config(text, str(args.config))
    elif required:
        raise ConfigError("one of --preset or --config is required")
    else:
        return None
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    if getattr(args, "scale", 1.0) != 1.0 or getattr(args, "iters", None) is not None:
        cfg = apply_scale(cfg, args.scale, args.iters)
    return cfg


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, default=float))


# -- subcommands -----------------------------------------------------------------


def cmd_generate_cloud(args) -> int:
    if args.kind:
        spec = {"kind": args.kind, "n": args.n, "n1": args.n1, "n2": args.n2}
        if args.alpha_max is not None:
            spec["alpha_max"] = args.alpha_max
        cloud = generate_geometry({k: v for k, v in spec.items() if v is not None})
        K = args.ghosts
    else:
        cfg = _load(args)
        cloud = generate_geometry(cfg.raw["geometry"])
        K = args.ghosts if args.ghosts is not None else cfg.raw["kernel"]["ghost_K"]
    write_cloud_csv(cloud, args.out)
    info = {"cloud": str(args.out), "N": cloud.N, "B": cloud.B, "d": cloud.d, "D": cloud.D}
    if K:
        ghosts = construct_ghost_points(cloud, K)
        gpath = Path(args.out).with_name(Path(args.out).stem + "_ghosts.csv")
        write_ghosts_csv(ghosts, gpath)
        info.update(ghosts=str(gpath), K=K)
    _print(info)
    return 0


def _eps_grid(args):
    if args.eps_min is None and args.eps_max is None and args.eps_num is None:
        return DEFAULT_EPS_GRID
    lo = args.eps_min if args.eps_min is not None else DEFAULT_EPS_GRID[0]
    hi = args.eps_max if args.eps_max is not None else DEFAULT_EPS_GRID[-1]
    return np.logspace(np.log10(lo), np.log10(hi), args.eps_num or 41)


def cmd_calibrate_eps(args) -> int:
    cfg = None if args.cloud else _load(args, required=False)
    cloud = read_cloud_csv(args.cloud) if args.cloud else None
    if cloud is None:
        if cfg is None:
            raise CliError("give --cloud, --preset or --config")
        cloud = generate_geometry(cfg.raw["geometry"])
    k = args.k_closest
    grid = _eps_grid(args)
    if cfg is not None:
        k = k if k is not None else cfg.raw["kernel"]["k_closest"]
        if args.eps_min is None and args.eps_max is None and args.eps_num is None:
            g = cfg.raw["kernel"]["eps_grid"]
            grid = np.logspace(np.log10(g["min"]), np.log10(g["max"]), int(g["num"]))
    if k is None:
        raise CliError("--k-closest is required with --cloud")
    (eps, slope), (le, lt, sl) = calibrate_epsilon(cloud.points, k, grid, return_table=True)
    rows = [{"log_eps": float(a), "log_T": float(b), "slope": float(c)} for a, b, c in zip(le, lt, sl)]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["log_eps", "log_T", "slope"])
            w.writeheader()
            w.writerows(rows)
    else:
        print("log_eps,log_T,slope")
        for r in rows:
            print(f"{r['log_eps']!r},{r['log_T']!r},{r['slope']!r}")
    _print({"epsilon": eps, "slope": slope, "k_closest": k, "d_over_2_target": cloud.d / 2})
    return 0


def cmd_build_operator(args) -> int:
    cfg = _load(args)
    cloud = generate_geometry(cfg.raw["geometry"])
    ghosts = construct_ghost_points(cloud, cfg.raw["kernel"]["ghost_K"])
    eps = cfg.raw["kernel"].get("epsilon")
    if args.kind in ("weighted_laplacian", "gpdm") and eps is None:
        (eps, _) = calibrate_epsilon(cloud.points, cfg.raw["kernel"]["k_closest"])
    kappa = np.ones(cloud.N)
    if args.kappa:
        kappa = np.broadcast_to(compile_field(args.kappa, COORDS[cloud.name])(*cloud.intrinsic.T), (cloud.N,)).astype(float)
    k_nn = cfg.raw["prior"]["k_nn"]
    if args.kind == "weighted_laplacian":
        op = weighted_laplacian(cloud.points, kappa, eps, cloud.d)
    elif args.kind == "self_tuned":
        op = self_tuned_laplacian(cloud.points, k_nn)
    elif args.kind == "truncated":
        full = self_tuned_laplacian(np.vstack([cloud.points, ghosts.points]), k_nn)
        op = truncated_laplacian(full, cloud.N)
    else:
        g = gpdm_operator(cloud, ghosts, kappa, eps)
        op = GraphOperator(g.L_tilde, "gpdm", None, eps)
    prefix = Path(args.out)
    write_operator(op, prefix.with_suffix(".csv"), prefix.with_suffix(".json"), cloud.B)
    info = {"kind": op.kind, "N": op.N, "B": cloud.B, "epsilon": op.epsilon, "matrix": str(prefix.with_suffix(".csv"))}
    if args.spectrum:
        spec = spectral_decompose(op, args.spectrum)
        spath = prefix.with_name(prefix.name + "_spectrum.csv")
        write_spectrum_csv(spec, spath)
        info["spectrum"] = str(spath)
    _print(info)
    return 0


def cmd_sample_prior(args) -> int:
    cfg = _load(args)
    setup = build_setup(cfg)
    rows = [(args.seed + i, setup.prior.sample(np.random.default_rng(args.seed + i))) for i in range(args.count)]
    write_samples_csv(rows, args.out)
    _print({"samples": str(args.out), "count": args.count, "seeds": [r[0] for r in rows], "n_coeffs": setup.prior.n_coeffs})
    return 0


def _read_node_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([float(r[1]) for r in rows[1:]])


def cmd_forward_solve(args) -> int:
    cfg = _load(args)
    setup = build_setup(cfg)
    problem = build_problem(setup)
    if args.input:
        value = _read_node_csv(args.input)
        if len(value) != setup.cloud.N:
            raise CliError(f"{args.input} has {len(value)} rows, cloud has N={setup.cloud.N}")
    else:
        value = problem.truth
    u = problem.solve_at(value)
    write_node_csv(u, args.out)
    _print({"forward": str(args.out), "problem": cfg.raw["problem"], "epsilon": setup.epsilon})
    return 0


def cmd_run_inversion(args) -> int:
    cfg = _load(args)
    if args.dry_run:
        _print({"status": "valid", "preset_name": cfg.name, "config": cfg.raw})
        return 0
    out = args.out if args.out else (Path(cfg.raw.get("output_dir") or default_output_root()) / cfg.name)
    run_dir = run_experiment(cfg, out, chains=args.chains, merge_chains=args.merge_chains, seed=args.seed)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    _print({k: manifest.get(k) for k in ("status", "preset_name", "acceptance_rate", "per_chain_acceptance", "wall_time_s")}
           | {"run_dir": str(run_dir)})
    return 0


def cmd_summarize(args) -> int:
    run = Path(args.run)
    manifest = json.loads((run / "manifest.json").read_text())
    cfg = parse_config(manifest["config"], str(run / "manifest.json"))
    setup = build_setup(cfg)
    problem = build_problem(setup)
    paths = sorted(run.glob("chain*.csv"))
    if not paths:
        raise CliError(f"no chain CSV in {run}")
    chains = []
    for p in paths:
        s = read_chain_csv(p)
        chains.append(Chain(s, 0, np.empty(0), 1))
    if not args.merge:
        chains = chains[:1]
    summary = summarize(chains[0], problem.summary_map, chains[1:])
    out = args.out or run / "summary.csv"
    write_summary_csv(summary, out)
    truth = problem.truth
    cover = float(np.mean((summary.p025 <= truth) & (truth <= summary.p975)))
    _print({"summary": str(out), "chains": [str(p) for p in paths[: len(chains)]], "coverage_of_truth": cover})
    return 0


def cmd_list_presets(args) -> int:
    for name in list_presets():
        cfg = load_preset(name)
        print(f"{name:28s} {cfg.raw.get('description', '')}")
    return 0


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gpdm-bayes", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--skip-self-test", action="store_true", help="skip the operator sign self-test")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate-cloud", help="write a point cloud (and ghosts) to CSV")
    _add_config_args(s)
    s.add_argument("--kind", choices=["flat_interval", "semi_ellipse", "semi_torus"])
    s.add_argument("--n", type=int)
    s.add_argument("--n1", type=int)
    s.add_argument("--n2", type=int)
    s.add_argument("--alpha-max", type=float)
    s.add_argument("--ghosts", type=int, help="ghost points per boundary point (0 to skip)")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_generate_cloud)

    s = sub.add_parser("calibrate-eps", help="print the log T table and the calibrated epsilon")
    _add_config_args(s)
    s.add_argument("--cloud", type=Path, help="cloud CSV instead of a preset geometry")
    s.add_argument("--k-closest", type=int)
    s.add_argument("--eps-min", type=float)
    s.add_argument("--eps-max", type=float)
    s.add_argument("--eps-num", type=int)
    s.add_argument("--out", type=Path, help="write the table here instead of stdout")
    s.set_defaults(func=cmd_calibrate_eps)

    s = sub.add_parser("build-operator", help="export a graph operator as CSV + JSON")
    _add_config_args(s)
    s.add_argument("--kind", choices=sorted(GraphOperator.KINDS), default="gpdm")
    s.add_argument("--kappa", help="diffusion expression in the intrinsic coordinates (default 1)")
    s.add_argument("--spectrum", type=int, help="also export this many eigenpairs (symmetric kinds)")
    s.add_argument("--out", type=Path, required=True, help="output prefix")
    s.set_defaults(func=cmd_build_operator)

    s = sub.add_parser("sample-prior", help="draw prior samples")
    _add_config_args(s)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_sample_prior)

    s = sub.add_parser("forward-solve", help="evaluate the forward map on node values")
    _add_config_args(s)
    s.add_argument("--input", type=Path, help="node CSV (idx, value) of kappa or u0; default is the truth")
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_forward_solve)

    s = sub.add_parser("run-inversion", help="run the full inversion pipeline")
    _add_config_args(s, scale=True)
    s.add_argument("--seed", type=int, help="chain seed (defaults to mcmc.seed)")
    s.add_argument("--chains", type=int, default=1)
    s.add_argument("--merge-chains", action="store_true")
    s.add_argument("--out", type=Path)
    s.add_argument("--dry-run", action="store_true", help="validate and print the resolved config only")
    s.set_defaults(func=cmd_run_inversion)

    s = sub.add_parser("summarize", help="recompute summary.csv from the chain CSVs of a run")
    s.add_argument("run", type=Path)
    s.add_argument("--merge", action="store_true", help="pool all chain_<k>.csv files")
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("list-presets", help="list shipped presets")
    s.set_defaults(func=cmd_list_presets)
    return p


def _error(exc: BaseException, code: int) -> int:
    err = {"type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError) and exc.line:
        err["line"] = exc.line
    print(json.dumps({"error": err}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if not args.skip_self_test and args.command not in ("list-presets",):
            check_sign_convention()
        return args.func(args)
    except ConfigError as exc:
        return _error(exc, 2)
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # every failure leaves as one structured message
        log.debug("failure", exc_info=True)
        return _error(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
