"""Command-line interface: analyze | merger | simulate | smallshare.

Exit codes: 0 ok, 1 input error, 2 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .applications import (
    consumer_surplus_delta,
    merger_report,
    merger_scenario,
    percentage_passthrough,
)
from .asymptotics import (
    aids_boundary_sequence,
    estimate_tail_coefficients,
    linear_boundary_sequence,
    ray_sequence,
    semi_elasticity_form,
    shift_sequence,
    theoretical_limit,
    thin_tail_diag_approx,
)
from .demand import eval_demand
from .equilibrium import soc_check, solve_bertrand
from .exceptions import InputError, NoConvergence, NumericalError, PassmatError
from .io import SchemaError, load_market, load_scenario, market_to_dict
from .market import SimulationConfig
from .passthrough import block_neumann, exact_passthrough, jacobian_decomposition
from .simulation import MATRIX_COLUMNS, PRICE_COLUMNS, config_hash, run_simulation, write_csv

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


# ---------------------------------------------------------------------------
# manifest and serialization


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else None
    return x


def _digest(obj):
    blob = json.dumps(_jsonable(obj), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def make_manifest(command, inputs, seed, chash):
    """Deterministic part of the run manifest (no timestamp)."""
    return {
        "command": command,
        "inputs": list(inputs),
        "seed": seed,
        "config_hash": chash,
        "version": __version__,
    }


def manifest_line(manifest):
    return "# passmat " + json.dumps(manifest, sort_keys=True)


def _write_manifest(out, manifest, extra=None):
    doc = dict(manifest)
    doc["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    doc.update(extra or {})
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _emit_json(doc, out, name, manifest):
    doc = {"manifest": manifest, **doc}
    text = json.dumps(_jsonable(doc), indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
        return None
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, name + ".json")
    with open(path, "w") as fh:
        fh.write(text)
    _write_manifest(out, manifest)
    return path


def _emit_csv(columns, rows, out, name, manifest):
    if out is None:
        sys.stdout.write(manifest_line(manifest) + "\n")
        sys.stdout.write(",".join(columns) + "\n")
        for r in rows:
            sys.stdout.write(",".join(repr(x) if isinstance(x, float) else str(x) for x in r) + "\n")
        return None
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, name + ".csv")
    write_csv(path, columns, rows, manifest_line(manifest))
    _write_manifest(out, manifest)
    return path


def _orders(text):
    try:
        orders = tuple(sorted({int(x) for x in text.split(",") if x.strip()}))
    except ValueError:
        raise InputError(f"--neumann: expected a comma list of integers, got {text!r}")
    if not orders or min(orders) < 0:
        raise InputError("--neumann: orders must be non-negative integers")
    return orders


def _vector(text, n, flag):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise InputError(f"{flag}: expected a number or a comma list, got {text!r}")
    if len(vals) == 1:
        return np.full(n, vals[0])
    if len(vals) != n:
        raise InputError(f"{flag}: expected 1 or {n} values, got {len(vals)}")
    return np.array(vals)


# ---------------------------------------------------------------------------
# report blocks


def _equilibrium_block(eq, soc=None):
    out = {
        "converged": eq.converged,
        "p_star": eq.p_star,
        "residual_norm": eq.residual_norm,
        "iterations": eq.iterations,
    }
    if soc is not None:
        out["soc_ok"] = soc.ok
        out["soc_max_eig"] = soc.max_eig
        out["soc_min_directional_margin"] = soc.min_directional_margin
    return out


def _passthrough_block(market, p, orders):
    rep = exact_passthrough(market, p, orders)
    blk = block_neumann(market, p, orders)
    return {
        "psi": rep.psi_exact,
        "lambda": rep.lam,
        "neumann": {str(k): v for k, v in rep.psi_trunc.items()},
        "frobenius_errors": {str(k): v for k, v in rep.frobenius_errors.items()},
        "block_frobenius_errors": {str(k): v for k, v in blk.frobenius_errors.items()},
        "diagnostics": rep.diagnostics,
    }


def _decompose_block(market, p):
    d = jacobian_decomposition(market, p)
    return {
        "j_f": d.j_f,
        "k_mat": d.k_mat,
        "c_mat": d.c_mat,
        "a_diag": d.a_diag,
        "b_off": d.b_off,
        "gamma": d.gamma,
        "spectral_radius": d.spectral_radius,
        "inf_norm": d.inf_norm,
        "sigma_max": d.sigma_max,
        "reassembly_error": d.reassembly_error,
    }


def tail_sequences(spec, p):
    """Small-share sequences appropriate to the family, starting from p."""
    fam = spec.family
    if fam == "linear":
        return [linear_boundary_sequence(spec, p, j) for j in range(spec.n_products)]
    if fam == "aids":
        return [aids_boundary_sequence(spec, p, j) for j in range(spec.n_products)]
    if fam == "nested_logit":
        return [shift_sequence(p, 10.0 ** np.arange(1.0, 3.01, 0.5))]
    return [ray_sequence(p)]


def smallshare_block(market, p):
    spec = market.demand
    n = spec.n_products
    a = np.full(n, np.nan)
    b = np.full((n, n), np.nan)
    err = np.full(n, np.nan)
    classes = [None] * n
    for seq in tail_sequences(spec, p):
        est = estimate_tail_coefficients(spec, seq)
        rows = np.flatnonzero(~np.isnan(est.a))
        a[rows], b[rows], err[rows] = est.a[rows], est.b[rows], est.convergence["a"][rows]
        for j in rows:
            classes[j] = est.tail_class[j]
    try:
        theory = theoretical_limit(spec, p)
        th = {"a": theory.a, "b": theory.b, "tail_class": theory.tail_class}
    except PassmatError as exc:
        th = {"unavailable": str(exc)}
    semi = semi_elasticity_form(spec, p)
    tt = thin_tail_diag_approx(market, p)
    return {
        "estimated": {"a": a, "b": b, "tail_class": classes, "convergence_a": err},
        "theoretical": th,
        "semi_elasticity": {"diag": semi.diag, "offdiag": semi.offdiag, "max_gap": semi.max_gap},
        "thin_tail_diag": {
            "diag": np.diag(tt.matrix),
            "inelastic": tt.inelastic,
            "covered": tt.covered,
            "family": tt.family,
        },
    }


def _welfare_block(market, p, psi, dtau):
    ev = eval_demand(market.demand, p)
    rep = percentage_passthrough(psi, p, market.cost, market.demand.family)
    revenues = p * ev.q
    out = {"dtau": dtau, "revenues": revenues, "psi_tau": rep.psi_tau, "limit_form": rep.limit_form,
           "limit_deviation": rep.deviation}
    if rep.limit_form is None:
        out["dcs"] = consumer_surplus_delta(revenues, rep.psi_tau, dtau)
    else:
        out["dcs"], out["dcs_limit"] = consumer_surplus_delta(revenues, rep.psi_tau, dtau, rep.limit_form)
    return out


# ---------------------------------------------------------------------------
# subcommands


def _solve(market, args):
    eq = solve_bertrand(market, tol=args.tol, check_soc=False)
    soc = soc_check(market, eq.p_star, seed=args.seed)
    eq.soc_ok = soc.ok
    return eq, soc


def cmd_analyze(args):
    market = load_market(args.market)
    orders = _orders(args.neumann)
    want_pt = args.passthrough or args.format == "csv" or not (args.decompose or args.smallshare or args.welfare is not None)
    dtau = None if args.welfare is None else _vector(args.welfare, market.n_products, "--welfare")
    settings = {"market": market_to_dict(market), "tol": args.tol, "neumann": orders,
                "flags": [want_pt, args.decompose, args.smallshare, args.welfare]}
    manifest = make_manifest("analyze", [args.market], args.seed, _digest(settings))
    report = {"label": market.label}
    code = EXIT_OK
    try:
        eq, soc = _solve(market, args)
        report["equilibrium"] = _equilibrium_block(eq, soc)
    except NoConvergence as exc:
        eq = exc.args[1] if len(exc.args) > 1 else None
        report["equilibrium"] = {"converged": False, "message": str(exc.args[0])}
        if eq is not None:
            report["equilibrium"].update(_equilibrium_block(eq))
        code = EXIT_NUMERIC
    if code == EXIT_OK:
        p = eq.p_star
        psi = None
        if want_pt or dtau is not None:
            pt = _passthrough_block(market, p, orders)
            psi = pt["psi"]
            if want_pt:
                report["passthrough"] = pt
        if args.decompose:
            report["decomposition"] = _decompose_block(market, p)
        if args.smallshare:
            report["smallshare"] = smallshare_block(market, p)
        if dtau is not None:
            report["welfare"] = _welfare_block(market, p, psi, dtau)
    if args.format == "csv":
        n = market.n_products
        cols = ("product", "p_star") + tuple(f"psi_{k}" for k in range(n))
        rows = []
        if "passthrough" in report:
            p, psi = report["equilibrium"]["p_star"], report["passthrough"]["psi"]
            rows = [(j, float(p[j])) + tuple(float(x) for x in psi[j]) for j in range(n)]
        _emit_csv(cols, rows, args.out, "analyze", manifest)
    else:
        _emit_json(report, args.out, "analyze", manifest)
    return code


def cmd_merger(args):
    files = args.files
    if len(files) > 2:
        raise InputError("merger takes [MARKET] SCENARIO")
    market_path = files[0] if len(files) == 2 else None
    scen_path = files[-1]
    market, pre, post, p0 = load_scenario(scen_path, market_path)
    try:
        scen = merger_scenario(pre, post, market.n_products)
    except InputError as exc:
        raise SchemaError(f"scenario: {exc}") from exc
    market = market.with_firms(scen.pre_partition)
    settings = {"market": market_to_dict(market), "pre": scen.pre_partition, "post": scen.post_partition,
                "p0": p0, "tol": args.tol}
    inputs = [f for f in files]
    manifest = make_manifest("merger", inputs, args.seed, _digest(settings))
    report = {"label": market.label, "pre_partition": scen.pre_partition, "post_partition": scen.post_partition,
              "affected": scen.affected}
    if p0 is None:
        try:
            p0 = solve_bertrand(market, tol=args.tol, check_soc=False).p_star
        except NoConvergence as exc:
            report["converged"] = False
            report["message"] = f"pre-merger equilibrium: {exc.args[0]}"
            _emit_json(report, args.out, "merger", manifest)
            return EXIT_NUMERIC
    rep = merger_report(market, p0, scen, tol=args.tol)
    report.update({
        "p0": p0,
        "upp": rep.upp,
        "pseudo_tax": rep.pseudo_tax,
        "dp_pretax": rep.dp_pretax,
        "dp_jw": rep.dp_jw,
        "dp_thin_tail": rep.dp_thin_tail,
        "slope_diff": rep.slope_diff,
        "dp_true": rep.dp_true,
        "p_post": rep.p_post,
        "errors_vs_true": rep.errors_vs_true,
        "converged": rep.converged,
    })
    if args.format == "csv":
        cols = ("product", "p0", "upp", "pseudo_tax", "dp_pretax", "dp_jw", "dp_thin_tail", "dp_true")
        true = rep.dp_true if rep.dp_true is not None else np.full(market.n_products, np.nan)
        rows = [
            (j, float(p0[j]), float(rep.upp[j]), float(rep.pseudo_tax[j]), float(rep.dp_pretax[j]),
             float(rep.dp_jw[j]), float(rep.dp_thin_tail[j]), float(true[j]))
            for j in range(market.n_products)
        ]
        _emit_csv(cols, rows, args.out, "merger", manifest)
    else:
        _emit_json(report, args.out, "merger", manifest)
    return EXIT_OK if rep.converged else EXIT_NUMERIC


def load_config(path):
    if path is None:
        return SimulationConfig()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    names = {f.name for f in dataclasses.fields(SimulationConfig)}
    if not isinstance(doc, dict):
        raise SchemaError("config: expected a JSON object")
    bad = set(doc) - names
    if bad:
        raise SchemaError(f"config: unknown field {sorted(bad)[0]!r}")
    for key in ("shifter_grid", "neumann_orders"):
        if key in doc:
            doc[key] = tuple(doc[key])
    cfg = SimulationConfig(**doc)
    if cfg.n_markets < 1 or cfg.n_products < 1 or cfg.n_firms < 1:
        raise SchemaError("config: n_markets, n_products and n_firms must be positive")
    if not cfg.cost_low <= cfg.cost_high:
        raise SchemaError("config: cost_low must not exceed cost_high")
    cfg.partition()
    return cfg


def cmd_simulate(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, base_seed=int(args.seed))
    cfg = dataclasses.replace(cfg, neumann_orders=_orders(args.neumann))
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    chash = config_hash(cfg)
    inputs = [args.config] if args.config else []
    manifest = make_manifest("simulate", inputs, cfg.base_seed, chash)
    rows, prices, failures = run_simulation(cfg, tol=args.tol)
    line = manifest_line(manifest)
    if args.format == "json":
        for name, cols, data in (("matrix_error", MATRIX_COLUMNS, rows), ("price_response", PRICE_COLUMNS, prices)):
            with open(os.path.join(out, name + ".json"), "w") as fh:
                json.dump(_jsonable({"manifest": manifest, "rows": [dict(zip(cols, r)) for r in data]}), fh, indent=1)
                fh.write("\n")
    else:
        write_csv(os.path.join(out, "matrix_error.csv"), MATRIX_COLUMNS, rows, line)
        write_csv(os.path.join(out, "price_response.csv"), PRICE_COLUMNS, prices, line)
    write_csv(os.path.join(out, "failures.csv"), ("market", "shifter", "error"), failures, line)
    _write_manifest(out, manifest, {"n_matrix_rows": len(rows), "n_price_rows": len(prices),
                                    "n_failures": len(failures)})
    if failures:
        log.warning("%d (market, shifter) cells failed and were excluded", len(failures))
    sys.stderr.write(f"wrote {len(rows)} matrix rows, {len(prices)} price rows, {len(failures)} failures to {out}\n")
    return EXIT_OK


def cmd_smallshare(args):
    market = load_market(args.market)
    settings = {"market": market_to_dict(market), "tol": args.tol}
    manifest = make_manifest("smallshare", [args.market], args.seed, _digest(settings))
    try:
        eq, soc = _solve(market, args)
    except NoConvergence as exc:
        _emit_json({"converged": False, "message": str(exc.args[0])}, args.out, "smallshare", manifest)
        return EXIT_NUMERIC
    block = smallshare_block(market, eq.p_star)
    if args.format == "csv":
        est, th = block["estimated"], block["theoretical"]
        cols = ("product", "p_star", "a_estimated", "a_theoretical", "tail_class", "thin_tail_diag")
        rows = [
            (j, float(eq.p_star[j]), float(est["a"][j]), float(th["a"][j]) if "a" in th else float("nan"),
             est["tail_class"][j], float(block["thin_tail_diag"]["diag"][j]))
            for j in range(market.n_products)
        ]
        _emit_csv(cols, rows, args.out, "smallshare", manifest)
    else:
        _emit_json({"label": market.label, "equilibrium": _equilibrium_block(eq, soc), "smallshare": block},
                   args.out, "smallshare", manifest)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=_seed, default=None)
    common.add_argument("--out", default=None, help="output directory (stdout when omitted, except simulate)")
    common.add_argument("--tol", type=float, default=1e-10)
    common.add_argument("--neumann", default="0,1,2", help="comma list of Neumann orders")
    common.add_argument("--format", choices=("json", "csv"), default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="passmat", description="Pass-through matrices for multiproduct Bertrand oligopoly.")
    parser.add_argument("--version", action="version", version=f"passmat {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", parents=[common], help="equilibrium, pass-through and diagnostics")
    a.add_argument("market")
    a.add_argument("--passthrough", action="store_true")
    a.add_argument("--decompose", action="store_true")
    a.add_argument("--smallshare", action="store_true")
    a.add_argument("--welfare", metavar="DTAU", default=None, help="percentage tax change, scalar or comma list")
    a.set_defaults(func=cmd_analyze, default_format="json")

    m = sub.add_parser("merger", parents=[common], help="first-order merger price effects")
    m.add_argument("files", nargs="+", metavar="[MARKET] SCENARIO")
    m.set_defaults(func=cmd_merger, default_format="json")

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo replication")
    s.add_argument("config", nargs="?", default=None)
    s.set_defaults(func=cmd_simulate, default_format="csv")

    t = sub.add_parser("smallshare", parents=[common], help="tail coefficients and thin-tail benchmark")
    t.add_argument("market")
    t.set_defaults(func=cmd_smallshare, default_format="json")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = args.default_format
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is None and args.command != "simulate":
        args.seed = 7
    try:
        return args.func(args)
    except InputError as exc:
        sys.stderr.write(f"passmat {args.command}: input error: {exc}\n")
        return EXIT_INPUT
    except NumericalError as exc:
        sys.stderr.write(f"passmat {args.command}: numerical error ({type(exc).__name__}): {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
