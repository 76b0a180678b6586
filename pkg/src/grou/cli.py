"""Command line front end: simulate | estimate | lasso | mc.

Every command reads one YAML config, draws all randomness from one seed and
writes its artifacts plus a manifest with their checksums into --out. Re-runs
with the same config and seed overwrite the data artifacts byte for byte;
the manifest additionally records the wall clock of the run.
"""

import argparse
import hashlib
import os
import sys
import time

import numpy as np

from . import __version__
from .config import (build_driver, build_dynamics, build_filter, build_graph,
                     build_jump_component, build_lasso, build_clock, build_experiment,
                     build_psou, load_config)
from .errors import ConfigError, GrouError, NumericError
from .estimators import format_report, psi_mle, report_to_obj, theta_mle
from .graphs import vec_inverse
from .harness import SCENARIOS, run_experiment, save_mc_report, thread_count
from .lasso import adaptive_lasso_fit, lasso_result_to_obj
from .likelihood import compute_psi_stats, compute_theta_stats
from .serialize import dump_json, write_csv
from .simulate import (load_jump_marks_csv, load_path_csv, path_sidecar,
                       save_jump_marks_csv, save_path_csv, simulate_grou)
from .stochvol import (conditional_estimate, load_sigma_path_csv, save_sigma_path_csv,
                       simulate_vol_modulated, with_sigma_path)

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(command: str, args, out_dir: str, seed: int,
                    artifacts: list, started: float) -> str:
    manifest = {
        "command": command,
        "config": os.path.abspath(args.config),
        "seed": seed,
        "out_dir": os.path.abspath(out_dir),
        "tool_version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
        "artifacts": {os.path.basename(p): _sha256(p) for p in sorted(artifacts)},
    }
    target = os.path.join(out_dir, "manifest.json")
    dump_json(manifest, target)
    return target


def _resolve_seed(args, cfg: dict) -> int:
    if args.seed is not None:
        return args.seed
    return int(cfg.get("seed", 0))


def _out_dir(args) -> str:
    out = args.out
    os.makedirs(out, exist_ok=True)
    return out


def _estimation_driver(cfg: dict, d: int):
    """Driver spec for the estimation commands; unlike simulate they have no
    sensible sigma default, so its absence is a config error."""
    if "driver" not in cfg or "sigma" not in cfg["driver"]:
        raise ConfigError("estimation needs driver.sigma in the config")
    return build_driver(cfg, d)


def _load_path_with_sidecars(path_file: str):
    """Path CSV plus the jump and covariance sidecars the simulate command
    writes next to it, when they exist."""
    stem, _ = os.path.splitext(path_file)
    jump_file = stem + "_jumps.csv"
    path = load_path_csv(path_file, jump_file if os.path.exists(jump_file) else None)
    sigma_file = stem + "_sigma.csv"
    if os.path.exists(sigma_file):
        path = with_sigma_path(path, load_sigma_path_csv(sigma_file))
    return path


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    started = time.time()
    graph = build_graph(cfg)
    _, _, q = build_dynamics(cfg, graph)
    t_end = cfg.get("t_end")
    if t_end is None:
        raise ConfigError("simulate needs t_end")
    dt = cfg.get("dt", 0.01)
    init = cfg.get("init", "stationary")
    if init == "zero":
        init = np.zeros(graph.d)
    if "psou" in cfg:
        path = simulate_vol_modulated(q, build_psou(cfg), build_clock(cfg),
                                      build_jump_component(cfg, graph.d),
                                      t_end, dt, seed, init=init)
        driver = None
    else:
        driver = build_driver(cfg, graph.d)
        path = simulate_grou(q, driver, t_end, dt, seed, init=init)
    base = os.path.join(out, "path")
    artifacts = [base + ".csv"]
    save_path_csv(path, base + ".csv")
    if path.jump_marks is not None:
        save_jump_marks_csv(path.jump_marks, base + "_jumps.csv")
        artifacts.append(base + "_jumps.csv")
    if path.sigma_path is not None:
        save_sigma_path_csv(path, base + "_sigma.csv")
        artifacts.append(base + "_sigma.csv")
    sidecar = path_sidecar(path, seed=seed, driver=driver)
    dump_json(sidecar, base + ".json")
    artifacts.append(base + ".json")
    _write_manifest("simulate", args, out, seed, artifacts, started)
    print(f"wrote {len(artifacts)} artifacts to {out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    started = time.time()
    est_cfg = cfg.get("estimate", {})
    mode = args.mode if args.mode is not None else est_cfg.get("mode", "theta")
    ci_level = est_cfg.get("ci_level", 0.95)
    graph = build_graph(cfg)
    opts = build_filter(cfg)
    path = _load_path_with_sidecars(args.path)
    if est_cfg.get("conditional", False):
        report = conditional_estimate(path, graph, kind="theta" if mode == "theta" else "psi",
                                      opts=opts, ci_level=ci_level)
    elif mode == "theta":
        driver = _estimation_driver(cfg, graph.d)
        stats = compute_theta_stats(path, graph, driver.sigma, opts)
        report = theta_mle(stats, ci_level=ci_level)
    else:
        driver = _estimation_driver(cfg, graph.d)
        stats = compute_psi_stats(path, driver.sigma, opts)
        report = psi_mle(stats, ci_level=ci_level)
    obj = report_to_obj(report)
    if mode == "q":
        # matrix-shaped view of the entrywise fit
        obj["q_matrix"] = [[float(x) for x in row] for row in vec_inverse(report.estimate)]
    target = os.path.join(out, "estimate.json")
    dump_json(obj, target)
    _write_manifest("estimate", args, out, seed, [target], started)
    print(format_report(report))
    return EXIT_OK


def cmd_lasso(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    started = time.time()
    graph_cfg_present = "graph" in cfg
    lasso_cfg = build_lasso(cfg)
    if not lasso_cfg.schedule_valid:
        print("warning: the penalty schedule is outside the support-recovery window "
              "(needs 1/2 < decay exponent < (1 + gamma) / 2); proceeding anyway",
              file=sys.stderr)
    d_cfg = build_graph(cfg).d if graph_cfg_present else None
    path = _load_path_with_sidecars(args.path)
    driver = _estimation_driver(cfg, d_cfg if d_cfg is not None else path.d)
    opts = build_filter(cfg)
    stats = compute_psi_stats(path, driver.sigma, opts)
    result = adaptive_lasso_fit(stats, lasso_cfg)
    target = os.path.join(out, "lasso.json")
    dump_json(lasso_result_to_obj(result), target)
    edges = [[i + 1, j + 1, result.q_matrix[i, j]]
             for i in range(result.q_matrix.shape[0])
             for j in range(result.q_matrix.shape[1])
             if i != j and result.support[i, j]]
    edge_file = os.path.join(out, "edges.csv")
    write_csv(edge_file, ["from", "to", "weight"], edges)
    _write_manifest("lasso", args, out, seed, [target, edge_file], started)
    n_edges = len(edges)
    print(f"selected {n_edges} directed edges at lambda {result.lambda_used:g}; "
          f"KKT {'satisfied' if result.kkt['satisfied'] else 'violated'}")
    return EXIT_OK


def cmd_mc(args) -> int:
    cfg = load_config(args.config)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    started = time.time()
    experiment = build_experiment(cfg, scenario=args.scenario, seed=seed)
    report = run_experiment(experiment)
    artifacts = save_mc_report(report, out, stem="mc")
    _write_manifest("mc", args, out, seed, artifacts, started)
    n_fail = len(report.failures)
    print(f"{experiment.scenario}: {experiment.replicates} replicates over "
          f"{len(experiment.horizons)} horizons, {n_fail} failed fits, "
          f"{thread_count()} worker(s); wrote {len(artifacts)} artifacts to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grou",
        description="Simulation and likelihood inference for OU processes on graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, path_arg=False):
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        if path_arg:
            p.add_argument("path", help="path CSV produced by the simulate command")

    p = sub.add_parser("simulate", help="simulate one path and write it to CSV")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit the drift on a saved path")
    common(p, path_arg=True)
    p.add_argument("--mode", choices=("theta", "psi", "q"), default=None,
                   help="parametrization to fit (default from config, else theta)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("lasso", help="sparse drift recovery on a saved path")
    common(p, path_arg=True)
    p.set_defaults(func=cmd_lasso)

    p = sub.add_parser("mc", help="replicated estimator experiment")
    common(p)
    p.add_argument("--scenario", choices=SCENARIOS, default=None,
                   help="override the config scenario")
    p.set_defaults(func=cmd_mc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GrouError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
