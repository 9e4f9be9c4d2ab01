"""Command-line runner tying configs, operators, solvers, and reports together.

Exit codes: 0 converged / success, 1 config error, 2 stopped at max_iter
without converging, 3 divergence.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .calculus import (
    frechet_check,
    gnn_lipschitz_report,
    rescale_to_contraction,
    spectral_norm,
)
from .errors import ConfigError, DivergenceError
from .ioutil import write_json_atomic, write_text_atomic
from .operators import (
    AffineOperator,
    AttentionOperator,
    GnnAggregateOperator,
    HammersteinOperator,
    operator_from_config,
)
from .picard import PicardConfig, banach_bounds, picard_solve, residual, trace_csv_text
from .pign import run_pign_experiment
from .spaces import DirectSumVector, GridFunction, load_matrix_text, load_vector_text

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MAX_ITER = 2
EXIT_DIVERGED = 3


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc


def _write_manifest(out_dir: Path, command: str, cfg: dict, seed: int) -> None:
    write_json_atomic(out_dir / "manifest.json", {
        "command": command,
        "config": cfg,
        "seed": seed,
        "version": __version__,
    })


def _resolve_free_term(entry, op, base_dir: str):
    """Build the free term f in the operator's domain from its config entry."""
    if isinstance(op, AffineOperator):
        d = op.dim
        if entry is None:
            return np.zeros(d)
        if isinstance(entry, dict) and "constant" in entry:
            return np.full(d, float(entry["constant"]))
        if isinstance(entry, str):
            vec = load_vector_text(os.path.join(base_dir, entry))
        else:
            vec = np.asarray(entry, dtype=float).ravel()
        if vec.shape != (d,):
            raise ConfigError("f", f"expected a length-{d} vector, got shape {vec.shape}")
        return vec
    if isinstance(op, HammersteinOperator):
        n = op.grid.n
        if entry is None:
            return GridFunction(op.grid, np.zeros(n))
        if isinstance(entry, dict) and "constant" in entry:
            return GridFunction(op.grid, np.full(n, float(entry["constant"])))
        if isinstance(entry, str):
            vec = load_vector_text(os.path.join(base_dir, entry))
        else:
            vec = np.asarray(entry, dtype=float).ravel()
        if vec.shape != (n,):
            raise ConfigError("f", f"expected {n} grid values, got shape {vec.shape}")
        return GridFunction(op.grid, vec)
    if isinstance(op, AttentionOperator):
        if entry is None:
            raise ConfigError("f", "attention solves need an explicit m x d matrix f")
        if isinstance(entry, str):
            M = load_matrix_text(os.path.join(base_dir, entry))
        else:
            M = np.asarray(entry, dtype=float)
        if M.ndim != 2 or M.shape[1] != op.d:
            raise ConfigError("f", f"expected an m x {op.d} matrix")
        return M
    if isinstance(op, GnnAggregateOperator):
        n, d = op.graph.n, op.d
        if entry is None:
            return DirectSumVector([np.zeros(d) for _ in range(n)])
        if isinstance(entry, dict) and "constant" in entry:
            return DirectSumVector([np.full(d, float(entry["constant"]))
                                    for _ in range(n)])
        if isinstance(entry, dict) and "blocks" in entry:
            M = np.asarray(entry["blocks"], dtype=float)
        elif isinstance(entry, str):
            M = load_matrix_text(os.path.join(base_dir, entry))
        else:
            M = np.asarray(entry, dtype=float)
        if M.shape != (n, d):
            raise ConfigError("f", f"expected an {n} x {d} block matrix, got {M.shape}")
        return DirectSumVector.from_matrix(M)
    raise ConfigError("operator.type", "unsupported operator for this command")


def _solve_setup(cfg: dict, base_dir: str):
    if "operator" not in cfg:
        raise ConfigError("operator", "missing section")
    if "picard" not in cfg:
        raise ConfigError("picard", "missing section")
    op = operator_from_config(cfg["operator"], base_dir)
    pcfg = PicardConfig.from_json(cfg["picard"])
    f = _resolve_free_term(cfg.get("f"), op, base_dir)
    return op, pcfg, f


def cmd_solve(cfg: dict, out_dir: Path, seed: int, quiet: bool, base_dir: str) -> int:
    op, pcfg, f = _solve_setup(cfg, base_dir)
    _write_manifest(out_dir, "solve", cfg, seed)
    try:
        solution, trace = picard_solve(op, pcfg, f)
    except DivergenceError as exc:
        trace = exc.trace
        write_text_atomic(out_dir / "trace.csv", trace_csv_text(trace))
        write_json_atomic(out_dir / "summary.json", {
            "converged": False,
            "diverged": True,
            "iterations_used": trace.iterations_used,
            "final_residual": None,
            "error": str(exc),
        })
        if not quiet:
            print(f"diverged after {trace.iterations_used} iterations: {exc}")
        return EXIT_DIVERGED
    final_residual = residual(op, pcfg.lam, f, solution, pcfg.norm_kind)
    write_text_atomic(out_dir / "trace.csv", trace_csv_text(trace))
    write_json_atomic(out_dir / "summary.json", {
        "converged": trace.converged,
        "diverged": False,
        "iterations_used": trace.iterations_used,
        "final_residual": final_residual,
    })
    if not quiet:
        status = "converged" if trace.converged else "max_iter reached"
        print(f"{status} after {trace.iterations_used} iterations, "
              f"residual {final_residual:.3e}")
    return EXIT_OK if trace.converged else EXIT_MAX_ITER


def cmd_rates(cfg: dict, out_dir: Path, seed: int, quiet: bool, base_dir: str) -> int:
    op, pcfg, f = _solve_setup(cfg, base_dir)
    rates_cfg = cfg.get("rates", {})
    k_T = rates_cfg.get("k")
    if k_T is None:
        if isinstance(op, AffineOperator):
            k_T = spectral_norm(op.A)
        else:
            raise ConfigError("rates.k", "a Lipschitz constant is required for "
                                         "non-affine operators")
    k_T = float(k_T)
    k_map = pcfg.smoothing + (1.0 - pcfg.smoothing) * abs(pcfg.lam) * k_T
    if k_map >= 1:
        raise ConfigError("rates.k", f"iteration map constant {k_map:.6g} is >= 1; "
                                     "rate bounds need a contraction")
    ref_eps = float(rates_cfg.get("reference_epsilon", 1e-13))
    ref_cfg = PicardConfig(lam=pcfg.lam, epsilon=ref_eps,
                           max_iter=max(10 * pcfg.max_iter, 10000),
                           smoothing=pcfg.smoothing, norm_kind=pcfg.norm_kind)
    reference, _ = picard_solve(op, ref_cfg, f)
    solution, trace = picard_solve(op, pcfg, f, record_iterates=True)
    bounds = banach_bounds(trace, k_map, reference=reference, norm_kind=pcfg.norm_kind)
    write_text_atomic(out_dir / "rates.csv", trace_csv_text(trace, bounds))
    write_json_atomic(out_dir / "summary.json", {
        "converged": trace.converged,
        "iterations_used": trace.iterations_used,
        "contraction_constant": k_map,
        "final_residual": residual(op, pcfg.lam, f, solution, pcfg.norm_kind),
    })
    _write_manifest(out_dir, "rates", cfg, seed)
    if not quiet:
        print(f"rate bounds over {trace.iterations_used} iterations at k={k_map:.4g}")
    return EXIT_OK if trace.converged else EXIT_MAX_ITER


def cmd_frechet_check(cfg: dict, out_dir: Path, seed: int, quiet: bool,
                      base_dir: str) -> int:
    if "operator" not in cfg:
        raise ConfigError("operator", "missing section")
    op = operator_from_config(cfg["operator"], base_dir)
    if not isinstance(op, AttentionOperator):
        raise ConfigError("operator.type", "frechet-check needs an attention operator")
    check = cfg.get("check", {})
    n_samples = int(check.get("n_samples", 100))
    rows = int(check.get("rows", op.d))
    t = float(check.get("t", 1e-5))
    t_order = float(check.get("order_t", 1e-3))
    rng = np.random.default_rng(seed)

    def _unit_pair():
        Y = rng.standard_normal((rows, op.d))
        H = rng.standard_normal((rows, op.d))
        Y *= rng.uniform(0.5, 1.0) / np.linalg.norm(Y)
        H *= rng.uniform(0.5, 1.0) / np.linalg.norm(H)
        return Y, H

    max_rel = 0.0
    errors_t, errors_half = [], []
    for _ in range(n_samples):
        Y, H = _unit_pair()
        max_rel = max(max_rel, frechet_check(op, Y, H, t=t).rel_error)
        e1 = frechet_check(op, Y, H, t=t_order)
        e2 = frechet_check(op, Y, H, t=t_order / 2)
        errors_t.append(np.linalg.norm(e1.analytic - e1.finite_difference))
        errors_half.append(np.linalg.norm(e2.analytic - e2.finite_difference))
    ratio = float(max(errors_t) / max(max(errors_half), 1e-300))
    report = {
        "n_samples": n_samples,
        "t": t,
        "max_rel_error": max_rel,
        "order_check": {
            "t": t_order,
            "max_error_t": float(max(errors_t)),
            "max_error_half_t": float(max(errors_half)),
            "ratio": ratio,
            "order_estimate": float(math.log2(ratio)) if ratio > 0 else None,
        },
    }
    write_json_atomic(out_dir / "frechet_report.json", report)
    _write_manifest(out_dir, "frechet-check", cfg, seed)
    if not quiet:
        print(f"max rel error {max_rel:.3e}; halving t scales error by 1/{ratio:.2f}")
    return EXIT_OK


def cmd_gnn_cert(cfg: dict, out_dir: Path, seed: int, quiet: bool, base_dir: str) -> int:
    if "operator" not in cfg:
        raise ConfigError("operator", "missing section")
    op = operator_from_config(cfg["operator"], base_dir)
    if not isinstance(op, GnnAggregateOperator):
        raise ConfigError("operator.type", "gnn-cert needs a gnn operator")
    report = gnn_lipschitz_report(op)
    certificate = {
        "L": report.L,
        "alpha_max": report.alpha_max,
        "coeffs": [int(c) for c in report.coeffs],
        "product": report.product,
        "certified": report.certified,
        "rescaled_W_path": None,
    }
    target = cfg.get("target")
    if target is not None:
        W2 = rescale_to_contraction(op.W, report.alpha_max, float(target))
        w_path = out_dir / "rescaled_W.txt"
        write_text_atomic(w_path, "\n".join(
            " ".join(repr(float(x)) for x in row) for row in W2) + "\n")
        rescaled = gnn_lipschitz_report(GnnAggregateOperator(op.graph, W2))
        certificate["rescaled_W_path"] = str(w_path)
        certificate["rescaled_product"] = rescaled.product
        certificate["target"] = float(target)
    write_json_atomic(out_dir / "certificate.json", certificate)
    _write_manifest(out_dir, "gnn-cert", cfg, seed)
    if not quiet:
        print(f"L={report.L:.4g} alpha_max={report.alpha_max} "
              f"product={report.product:.4g} certified={report.certified}")
    return EXIT_OK


def cmd_pign(cfg: dict, out_dir: Path, seed: int, quiet: bool, base_dir: str) -> int:
    seeds = cfg.get("seeds", [seed])
    results = run_pign_experiment(cfg, seeds, csv_path=out_dir / "pign_report.csv")
    summary = {
        "seeds": [int(s) for s in seeds],
        "mode": results[0].mode,
        "noise_p": results[0].noise_p,
        "mean_pign_accuracy": float(np.mean([r.readout_accuracy for r in results])),
        "mean_baseline_accuracy": float(np.mean([r.baseline_accuracy for r in results])),
    }
    write_json_atomic(out_dir / "summary.json", summary)
    _write_manifest(out_dir, "pign", cfg, seed)
    if not quiet:
        print(f"pign {summary['mean_pign_accuracy']:.3f} vs baseline "
              f"{summary['mean_baseline_accuracy']:.3f} over {len(seeds)} seeds")
    return EXIT_OK


def _set_dotted(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node.get(part), dict):
            raise ConfigError("sweep.field", f"path {dotted!r} not found in config")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError("sweep.field", f"path {dotted!r} not found in config")
    node[parts[-1]] = value


def cmd_sweep(cfg: dict, out_dir: Path, seed: int, quiet: bool, base_dir: str) -> int:
    sweep = cfg.get("sweep")
    if not isinstance(sweep, dict):
        raise ConfigError("sweep", "missing section")
    for key in ("command", "field", "values"):
        if key not in sweep:
            raise ConfigError(f"sweep.{key}", "missing required field")
    command = sweep["command"]
    if command not in ("solve", "rates", "pign"):
        raise ConfigError("sweep.command", f"cannot sweep {command!r}")
    runner = COMMANDS[command]
    base = {k: v for k, v in cfg.items() if k != "sweep"}
    values = sweep["values"]
    threads = max(1, int(os.environ.get("PICARD_OP_THREADS", "1") or 1))

    def _one(item):
        idx, value = item
        sub_cfg = copy.deepcopy(base)
        _set_dotted(sub_cfg, sweep["field"], value)
        run_dir = out_dir / "runs" / f"{idx:03d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        try:
            code = runner(sub_cfg, run_dir, seed, True, base_dir)
        except ConfigError as exc:
            write_json_atomic(run_dir / "summary.json", {"error": str(exc)})
            return idx, value, EXIT_CONFIG
        return idx, value, code

    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(_one, enumerate(values)))
    rows.sort()
    lines = ["index,value,exit_code"]
    for idx, value, code in rows:
        lines.append(f"{idx},{json.dumps(value)},{code}")
    write_text_atomic(out_dir / "sweep.csv", "\n".join(lines) + "\n")
    _write_manifest(out_dir, "sweep", cfg, seed)
    if not quiet:
        print(f"swept {sweep['field']} over {len(values)} values "
              f"(threads={threads})")
    return EXIT_CONFIG if any(code == EXIT_CONFIG for _, _, code in rows) else EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "rates": cmd_rates,
    "frechet-check": cmd_frechet_check,
    "gnn-cert": cmd_gnn_cert,
    "pign": cmd_pign,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="picard-op",
        description="Fixed-point operator equation runner: solve lambda*T(x) + f = x "
                    "and report convergence diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "run a fixed-point solve and write trace + summary"),
        ("rates", "per-iteration error bounds against a high-accuracy reference"),
        ("frechet-check", "compare analytic attention derivative with finite differences"),
        ("gnn-cert", "contraction certificate for a graph aggregation operator"),
        ("pign", "iterated message-passing experiment on synthetic graphs"),
        ("sweep", "repeat a command over a list of values for one config field"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=0, help="base random seed")
        p.add_argument("--quiet", action="store_true", help="suppress status output")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        base_dir = os.path.dirname(os.path.abspath(args.config))
        return COMMANDS[args.command](cfg, out_dir, args.seed, args.quiet, base_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: iteration diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
