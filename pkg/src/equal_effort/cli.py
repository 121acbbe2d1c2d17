"""Command-line interface: ``equal-effort audit | repair | report``.

Exit codes: 0 no discrimination (or successful repair), 2 discrimination
detected (or repair ineffective), 1 any error. Log verbosity comes from the
``EQUAL_EFFORT_LOG`` environment variable (e.g. ``DEBUG``); it changes
nothing else.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import REGENERATE_STREAM, derive_seed, load_config
from .effort import AuditReport, detect, make_backend, render_table
from .exceptions import ConfigError, EqualEffortError
from .removal import fit_fair, regenerate, utility_loss, verify_repair

logger = logging.getLogger("equal_effort")

EXIT_OK, EXIT_ERROR, EXIT_DISCRIMINATION = 0, 1, 2
LOG_ENV = "EQUAL_EFFORT_LOG"


def _gamma_list(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _gamma_range(text):
    vals = _gamma_list(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("expected two comma-separated values")
    return vals


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; 2 is reserved for a discrimination verdict."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="equal-effort", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p):
        p.add_argument("--config", required=True, help="INI run configuration")
        p.add_argument("--backend", action="append", choices=["regression", "weighting", "scm"],
                       help="backend to use; repeat for several (overrides [audit] backends)")
        p.add_argument("--level", help="system | group:attr=value,... | individual:<row id>")
        g = p.add_mutually_exclusive_group()
        g.add_argument("--gamma", type=_gamma_list, help="comma-separated outcome levels")
        g.add_argument("--gamma-range", type=_gamma_range, help="g1,g2 continuous range")
        p.add_argument("--tau", type=float, help="threshold on |AED|")
        p.add_argument("--lambda", dest="lam", type=float, help="AED penalty weight")
        p.add_argument("--seed", type=int, help="run seed")
        p.add_argument("--graph", type=Path, help="causal graph edge list (scm backend)")
        p.add_argument("--out", type=Path, help="output directory")

    run_flags(sub.add_parser("audit", help="detect effort discrepancy"))
    run_flags(sub.add_parser("repair", help="regenerate outcomes under an AED penalty"))
    rep = sub.add_parser("report", help="merge audit reports into one table")
    rep.add_argument("reports", nargs="+", type=Path, help="audit report JSON files")
    rep.add_argument("--out", type=Path, help="write the table here instead of stdout")
    rep.add_argument("--csv", action="store_true", help="comma-separated output")
    return parser


def _config(args):
    cfg = load_config(args.config)
    changes = dict(
        backends=tuple(args.backend) if args.backend else None, level=args.level,
        tau=args.tau, lam=args.lam, seed=args.seed, graph_path=args.graph, out_dir=args.out,
    )
    cfg = cfg.override(**changes)
    # a gamma flag replaces whichever gamma form the file used
    if args.gamma is not None:
        cfg = cfg.override(gammas=args.gamma)
        cfg.gamma_range = None
    if args.gamma_range is not None:
        cfg = cfg.override(gamma_range=args.gamma_range)
        cfg.gammas = None
    return cfg.validate()


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _level_tag(level):
    return "".join(c if c.isalnum() else "_" for c in level)


def cmd_audit(cfg):
    d = cfg.load_data()
    graph = cfg.load_graph(d.schema)
    reports = []
    for name in cfg.backends:
        backend = make_backend(name, graph=graph)
        r = detect(d, backend, tau=cfg.tau, level=cfg.level, k_min=cfg.k_min, **cfg.gamma_spec)
        stem = f"audit_{name}_{_level_tag(r.level)}"
        _write(cfg.out_dir / f"{stem}.json", r.to_json())
        _write(cfg.out_dir / f"{stem}.txt", r.to_table())
        print(r.summary())
        reports.append(r)
    _write(cfg.out_dir / f"table_{_level_tag(reports[0].level)}.txt", render_table(reports))
    return EXIT_DISCRIMINATION if any(r.verdict for r in reports) else EXIT_OK


def _audit_summary(r):
    aed = None if np.isnan(r.aed) else float(r.aed)
    return {"aed": aed, "verdict": bool(r.verdict), "mean_curve_difference": r.mean_curve_difference}


def cmd_repair(cfg):
    d = cfg.load_data()
    pair = fit_fair(d, cfg.lam, reduction=cfg.reduction, **cfg.gamma_spec)
    repaired = regenerate(d, pair, derive_seed(cfg.seed, REGENERATE_STREAM))
    loss = utility_loss(d, repaired)
    before = detect(d, "regression", tau=cfg.tau, **cfg.gamma_spec)
    after = verify_repair(repaired, "regression", tau=cfg.tau, **cfg.gamma_spec)

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    repaired.write_csv(cfg.out_dir / "repaired.csv")
    manifest = {
        "seed": cfg.seed,
        "regenerate_seed": {"entropy": cfg.seed, "stream": REGENERATE_STREAM},
        **pair.to_dict(),
        "utility_loss": loss,
        "audit_before": _audit_summary(before),
        "audit_after": _audit_summary(after),
    }
    _write(cfg.out_dir / "repair_manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _write(cfg.out_dir / "audit_after_repair.json", after.to_json())
    print(f"fair-model AED {pair.aed:+.4f} after {pair.n_iter} iterations")
    print(f"utility loss (chi-square) {loss:.1f}")
    print(after.summary())
    if after.verdict:
        print("repair ineffective: the repaired data still shows effort discrepancy", file=sys.stderr)
        return EXIT_DISCRIMINATION
    return EXIT_OK


def _load_report(path):
    try:
        return AuditReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ConfigError(f"malformed report {path}: {e}") from None


def cmd_report(paths, out=None, csv=False):
    reports = [_load_report(p) for p in paths]
    try:
        table = render_table(reports)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if csv:
        table = "\n".join(",".join(line.split()) for line in table.splitlines()) + "\n"
    if out is None:
        sys.stdout.write(table)
    else:
        _write(out, table)
    return EXIT_OK


def main(argv=None):
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.reports, args.out, args.csv)
        cfg = _config(args)
        return cmd_audit(cfg) if args.command == "audit" else cmd_repair(cfg)
    except (EqualEffortError, OSError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
