"""Batch command-line interface.

Every command reads one config file, writes its records through a single
writer (JSON lines or CSV) and opens with a reproducibility stanza.  Exit
codes: 0 success, 2 configuration error, 3 numeric failure, 4 capacity guard.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import math
import sys

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .dp import backward_induction, brute_force_min
from .errors import CapacityError, ConfigError, LmpseqError, NumericError
from .exact import propagate
from .lagrange import compare_designs, default_competitors, objective
from .rho import rho_fixed_point
from .simulate import estimate, power_curve
from .thresholds import design_from_thresholds, make_design, make_design_with_grid, \
    solve_thresholds

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CAPACITY = 0, 2, 3, 4


def _plain(v):
    """JSON-safe scalar: numpy types unwrapped, non-finite floats as strings."""
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


class RecordWriter:
    """Serialises records in order.  CSV output starts a new table (blank
    line, header) whenever the record layout changes; the stanza is a
    ``#`` comment line."""

    def __init__(self, fh, fmt: str):
        self.fh = fh
        self.fmt = fmt
        self._header = None
        self._csv = csv.writer(fh, lineterminator="\n")

    def stanza(self, rec: dict) -> None:
        line = json.dumps(_plain(rec), allow_nan=False)
        self.fh.write(line + "\n" if self.fmt == "jsonl" else "# " + line + "\n")

    def emit(self, kind: str, rec: dict) -> None:
        rec = _plain(rec)
        if self.fmt == "jsonl":
            self.fh.write(json.dumps({"record": kind, **rec}, allow_nan=False) + "\n")
            return
        header = list(rec)
        if header != self._header:
            if self._header is not None:
                self.fh.write("\n")
            self._csv.writerow(header)
            self._header = header
        self._csv.writerow([_cell(rec[k]) for k in header])


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v)
    return v


# ----------------------------------------------------------------------
# commands


def cmd_design(cfg: RunConfig, out: RecordWriter, args) -> None:
    design, rho = make_design_with_grid(cfg.model, cfg.b, cfg.c, cfg.design)
    out.emit("design", {**design.to_record(), "width": _width(design)})
    if args.emit_grid:
        with open(args.emit_grid, "w", newline="") as fh:
            rho.write_csv(fh)


def cmd_simulate(cfg: RunConfig, out: RecordWriter, args) -> None:
    design = make_design(cfg.model, cfg.b, cfg.c, cfg.design)
    out.emit("simulation", estimate(design, cfg.model, cfg.simulate).to_record())
    for theta, power, se in power_curve(design, cfg.model, cfg.theta_list, cfg.simulate):
        out.emit("power", {"theta": theta, "power": power, "se": se})


def cmd_dp(cfg: RunConfig, out: RecordWriter, args) -> None:
    policy = backward_induction(cfg.model, cfg.b, cfg.c, cfg.dp.N)
    rec = objective(policy, cfg.b, cfg.c)
    out.emit("dp", {"N": policy.N, "b": policy.b, "c": policy.c, "value": policy.value,
                    "asn": rec.asn, "alpha": rec.alpha, "beta_dot": rec.beta_dot, "L": rec.L})
    if args.emit_policy:
        with open(args.emit_policy, "w", newline="") as fh:
            policy.write_csv(fh)


def cmd_bruteforce(cfg: RunConfig, out: RecordWriter, args) -> None:
    value = brute_force_min(cfg.model, cfg.b, cfg.c, cfg.dp.N, limit=cfg.dp.enumeration_limit)
    out.emit("bruteforce", {"N": cfg.dp.N, "b": cfg.b, "c": cfg.c, "value": value})


def cmd_verify(cfg: RunConfig, out: RecordWriter, args) -> None:
    design = make_design(cfg.model, cfg.b, cfg.c, cfg.design)
    comps = default_competitors(design, cfg.verify.shifts, cfg.verify.fixed_n)
    report = compare_designs(design, comps, cfg.model, cfg.simulate,
                             n_sigma=cfg.verify.n_sigma, tol=cfg.verify.tol)
    for r in report.all_rows():
        out.emit("comparison", {"design_id": r.design_id, "asn": r.asn, "alpha": r.alpha,
                                "beta_dot": r.beta_dot, "L": r.L, "se_L": r.se_L,
                                "verdict": r.verdict})
    out.emit("verdict", {"optimal": report.optimal, "competitors": len(report.rows),
                         "violations": sum(r.verdict == "violation" for r in report.rows)})


def cmd_sweep(cfg: RunConfig, out: RecordWriter, args) -> None:
    """Designs (and their objectives) over the ``b x c`` lattice.

    The value function depends on ``c`` only, so it is solved once per ``c``.
    Objectives are exact for finitely supported families and simulated
    otherwise.
    """
    for c in cfg.sweep.c:
        rho = rho_fixed_point(cfg.model, c, cfg.design.grid, cfg.design.tol,
                              cfg.design.max_iter)
        th = solve_thresholds(rho, cfg.model, c, cfg.design.root_tol)
        for b in cfg.sweep.b:
            design = design_from_thresholds(th, b, c, rho)
            rec = {"b": b, "c": c, "degenerate": design.degenerate, "lower": design.lower,
                   "upper": design.upper, "A_c": design.A_c, "B_c": design.B_c,
                   "width": _width(design)}
            if cfg.sweep.objective:
                if cfg.model.is_finite_discrete:
                    obj = objective(propagate(design, cfg.model), b, c, design.design_id)
                else:
                    obj = objective(estimate(design, cfg.model, cfg.simulate), b, c)
                rec.update(asn=obj.asn, alpha=obj.alpha, beta_dot=obj.beta_dot, L=obj.L,
                           se_L=obj.se_L, exactness=obj.exactness.value)
            out.emit("sweep", rec)


def _width(design) -> float:
    return 0.0 if design.degenerate else design.upper - design.lower


COMMANDS = {
    "design": cmd_design,
    "simulate": cmd_simulate,
    "dp": cmd_dp,
    "bruteforce": cmd_bruteforce,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, help="override simulate.seed")
    common.add_argument("--threads", type=int, help="worker threads (capped by LMPSEQ_THREADS)")
    common.add_argument("--format", choices=("jsonl", "csv"), help="override output.format")
    common.add_argument("--output", help="override output.path ('-' for stdout)")
    parser = argparse.ArgumentParser(prog="lmpseq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("design", parents=[common], help="solve thresholds for (b, c)")
    p.add_argument("--emit-grid", metavar="PATH", help="also write the value function CSV")
    sub.add_parser("simulate", parents=[common], help="Monte Carlo operating characteristics")
    p = sub.add_parser("dp", parents=[common], help="optimal truncated rule by backward induction")
    p.add_argument("--emit-policy", metavar="PATH", help="also write the policy CSV")
    sub.add_parser("bruteforce", parents=[common], help="exhaustive truncated minimum")
    sub.add_parser("verify", parents=[common], help="compare the design with competitors")
    sub.add_parser("sweep", parents=[common], help="designs over a (b, c) lattice")
    return parser


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.threads, args.format,
                                                      args.output)
        path = cfg.output.path
        with contextlib.ExitStack() as stack:
            if path and path != "-":
                try:
                    fh = stack.enter_context(open(path, "w", newline=""))
                except OSError as exc:
                    raise ConfigError(f"cannot open output {path}: {exc.strerror}") from None
            else:
                fh = stdout
            out = RecordWriter(fh, cfg.output.format)
            out.stanza({"record": "stanza", "command": args.command,
                        "config_sha256": cfg.digest(), "seed": cfg.simulate.seed,
                        "version": __version__})
            COMMANDS[args.command](cfg, out, args)
    except CapacityError as exc:
        print(f"lmpseq: capacity: {exc}", file=stderr)
        return EXIT_CAPACITY
    except NumericError as exc:
        print(f"lmpseq: numeric failure: {exc}", file=stderr)
        return EXIT_NUMERIC
    except (LmpseqError, ValueError, TypeError) as exc:
        # domain and unsupported-model errors come from the config contents
        print(f"lmpseq: config error: {exc}", file=stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main() -> None:
    sys.exit(run())
