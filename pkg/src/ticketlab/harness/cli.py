"""``ticketlab`` command line.

Every subcommand reads an optional INI config (``--config``) and accepts
``--seed``, ``--out`` and ``--paper-fidelity`` overrides.  Runs land in
``--out`` or, failing that, under ``$TICKETLAB_OUT`` (default ``./runs``).

Exit status: 0 on success, 1 when a training run diverged, 2 on bad input.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

from ..scaling import InsufficientDataError, fit_power_law, regimes_csv, segment_regimes
from .config import ConfigError, ExperimentConfig, parse_config
from .runner import compare_runs, default_out_root, read_trace_csv, run, write_atomic

log = logging.getLogger("ticketlab")


def _declared_kind(text: str) -> str | None:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error:
        return None
    return cp.get("experiment", "kind", fallback=None)


def _load(args, kind_for) -> ExperimentConfig:
    text = Path(args.config).read_text() if args.config else ""
    kind = kind_for(_declared_kind(text))
    overrides = {"seed": args.seed, "out": str(args.out) if args.out else None}
    if args.paper_fidelity:
        overrides["paper_fidelity"] = True
    cfg = parse_config(text, kind, **overrides)
    if getattr(args, "system", None):
        from dataclasses import replace
        cfg = replace(cfg, system=args.system.upper(), initial_state=None)
    return cfg


def _execute(cfg) -> int:
    manifest = run(cfg)
    print(f"{cfg.kind}: {manifest.status}, {len(manifest.files)} files in {manifest.out_dir}")
    return 0 if manifest.status == "ok" else 1


def cmd_train(args) -> int:
    return _execute(_load(args, lambda k: "train_full"))


def cmd_prune(args) -> int:
    def kind(k):
        if args.layerwise:
            return "imp_layerwise"
        return k if k in ("imp_global", "imp_layerwise") else "imp_global"
    return _execute(_load(args, kind))


def cmd_rgflow(args) -> int:
    return _execute(_load(args, lambda k: "rg_observables"))


def cmd_transfer(args) -> int:
    def kind(k):
        if args.direction:
            return f"transfer_{args.direction}"
        return k if k in ("transfer_nlo_to_hh", "transfer_hh_to_nlo") else "transfer_nlo_to_hh"
    return _execute(_load(args, kind))


def cmd_fit(args) -> int:
    cfg = _load(args, lambda k: k or "imp_global")
    out = Path(args.out) if args.out else default_out_root()
    trace_path = Path(args.trace) if args.trace else out / "trace.csv"
    cols = read_trace_csv(trace_path)
    ok = cols["diverged"] == 0
    d = cols["density"] if args.layer is None else cols[f"d_{args.layer}"]
    d, eps = d[ok], cols["epsilon"][ok]
    seg = segment_regimes(d, eps, cfg.plateau_factor)
    write_atomic(out / "regimes.csv", regimes_csv(seg))
    window = cfg.fit_window or seg.power_window
    if window is None:
        print("no power-law window found", file=sys.stderr)
        return 1
    fit = fit_power_law(d, eps, window)
    write_atomic(out / "fit.txt", fit.summary())
    sys.stdout.write(fit.summary())
    return 0


def cmd_compare(args) -> int:
    report = compare_runs(args.run_a, args.run_b)
    text = report.table()
    sys.stdout.write(text)
    if args.out:
        write_atomic(Path(args.out) / "universality.txt", text)
    return 0 if report.agree else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment config")
    common.add_argument("--seed", type=int, help="top-level seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--paper-fidelity", action="store_true", help="5e4 epochs and full schedules")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ticketlab", description="Lottery tickets for Hamiltonian ODE networks")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("train", parents=[common], help="train the full network once")
    s.add_argument("--system", choices=["NLO", "HH", "nlo", "hh"])
    s.set_defaults(fn=cmd_train)
    s = sub.add_parser("prune", parents=[common], help="iterative magnitude pruning")
    s.add_argument("--system", choices=["NLO", "HH", "nlo", "hh"])
    s.add_argument("--layerwise", action="store_true", help="prune one layer at a time")
    s.set_defaults(fn=cmd_prune)
    s = sub.add_parser("rgflow", parents=[common], help="global pruning plus RG observables")
    s.add_argument("--system", choices=["NLO", "HH", "nlo", "hh"])
    s.set_defaults(fn=cmd_rgflow)
    s = sub.add_parser("fit", parents=[common], help="segment and fit an existing trace")
    s.add_argument("--trace", help="trace CSV (default: OUT/trace.csv)")
    s.add_argument("--layer", type=int, help="use layer density d_LAYER as abscissa")
    s.set_defaults(fn=cmd_fit)
    s = sub.add_parser("transfer", parents=[common], help="transfer tickets between systems")
    s.add_argument("--direction", choices=["nlo_to_hh", "hh_to_nlo"])
    s.set_defaults(fn=cmd_transfer)
    s = sub.add_parser("compare", parents=[common], help="compare sigma of two rgflow runs")
    s.add_argument("run_a")
    s.add_argument("run_b")
    s.set_defaults(fn=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, InsufficientDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
