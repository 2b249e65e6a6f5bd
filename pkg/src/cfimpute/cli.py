"""Command-line interface: ``cfimpute simulate | analyze | truth``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import COMMANDS, FAMILY_CHOICES, build_config, load_config_file
from .errors import CfImputeError, ConfigError
from .missingness import NESTING_NOTE, analyze_with_scenarios
from .panel import Schema, load_panel
from .pooling import CSV_FIELDS
from .simlab import PRESETS, SITUATIONS, GeneratorSpec, run_study, true_ace_curve
from .estimators import parse_profiles

log = logging.getLogger("cfimpute")


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return v


def _write_csv(path: Path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row[k]) for k in fields})


def _write_json(path: Path, doc):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _sidecar(cfg, **extra):
    return {"cfimpute_version": __version__, "config": cfg.to_dict(), "master_seed": cfg.seed, **extra}


def _schema_for(path, given):
    """Schema from the config; optional C1/C2 columns default to present only if in the header."""
    m = dict(given or {})
    m.setdefault("baseline", ["V"])
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    for role, col in (("c1", "C1"), ("c2", "C2")):
        if role not in m and col not in header:
            m[role] = None
    return Schema.from_mapping(m)


def cmd_analyze(cfg, threads):
    schema = _schema_for(cfg.input, cfg.schema)
    data = load_panel(cfg.input, schema)
    est = cfg.estimator_config(cfg.families[0])
    res = analyze_with_scenarios(data, cfg.scenario_obj(), est, cfg.seed, threads)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "ace.csv"
    _write_csv(path, CSV_FIELDS + ("scenario",), res.rows())
    extra = {"estimator": est.to_dict(), "scenario": res.scenario.to_dict(), "completed_sets": res.n_sets,
             "replicate_failures": [list(f) for f in res.failures]}
    if res.scenario.kind == "mice":
        extra["nesting"] = NESTING_NOTE
    _write_json(path.with_suffix(".csv.json"), _sidecar(cfg, **extra))
    return [path]


def cmd_simulate(cfg, threads):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = GeneratorSpec(cfg.situation, n=cfg.n, overrides=cfg.overrides)
    written = []
    for fam in cfg.families:
        est = cfg.estimator_config(fam)
        progress = lambda i, k, fam=fam: log.info("%s: simulation %d/%d", fam, i, k)
        res = run_study(spec, est, cfg.n_sims, cfg.seed, threads, cfg.n_mc, progress=progress)
        path = out / f"study_{cfg.situation}_{cfg.estimator}_{fam}.csv"
        res.write(path)
        side = path.with_suffix(".csv.json")
        doc = json.loads(side.read_text())
        _write_json(side, _sidecar(cfg, study=doc, preset=cfg.preset, preset_values=PRESETS[cfg.preset]))
        written.append(path)
    return written


def cmd_truth(cfg, threads):
    spec = GeneratorSpec(cfg.situation, overrides=cfg.overrides)
    H = cfg.horizon or spec.T
    profiles = parse_profiles(cfg.profiles, spec.T) if cfg.profiles else None
    mean, se = true_ace_curve(spec, cfg.n_mc, cfg.seed, profiles=profiles)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"truth_{cfg.situation}.csv"
    rows = [{"t": t + 1, "true_ace": float(mean[t]), "mc_se": float(se[t])} for t in range(H)]
    _write_csv(path, ("t", "true_ace", "mc_se"), rows)
    _write_json(path.with_suffix(".csv.json"), _sidecar(cfg, generator=spec.to_dict()))
    return [path]


HANDLERS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "truth": cmd_truth}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfimpute", description="Counterfactual imputation of compliance effects.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="YAML/JSON config or a result sidecar to rerun")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--threads", type=int, default=None, help="worker processes (default: all cores)")
        s.add_argument("--horizon", type=int)
        s.add_argument("--profiles", help="e.g. '101 vs 000' (default: all ones vs all zeros)")
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("simulate", "truth"):
            s.add_argument("--situation", choices=SITUATIONS)
            s.add_argument("--n-mc", dest="n_mc", type=int)
        if name in ("simulate", "analyze"):
            s.add_argument("--estimator", choices=("sequential", "pencomp"))
            s.add_argument("--family", action="append", choices=FAMILY_CHOICES,
                           help="model family; repeat for several (simulate only)")
            s.add_argument("--B", type=int, help="bootstrap replicates")
            s.add_argument("--history", choices=("full", "lag1"))
            s.add_argument("--shared", action=argparse.BooleanOptionalAction, default=None,
                           help="one set of coefficients for every t > 1 (needs --history lag1)")
            s.add_argument("--df-convention", dest="df_convention", choices=("bplus1", "standard"))
        if name == "simulate":
            s.add_argument("--preset", choices=sorted(PRESETS))
            s.add_argument("--n-sims", dest="n_sims", type=int)
            s.add_argument("--n", type=int)
        if name == "analyze":
            s.add_argument("--input", help="long-format panel CSV")
            s.add_argument("--baseline", help="comma-separated baseline columns (default V)")
            s.add_argument("--scenario", choices=("all_complied", "all_not_complied", "mice"))
            s.add_argument("--mice-sets", dest="mice_sets", type=int)
            s.add_argument("--mice-cycles", dest="mice_cycles", type=int)
    return p


def _cli_values(args, file_values):
    skip = {"config", "threads", "verbose", "command", "family", "history", "shared", "baseline"}
    vals = {k: v for k, v in vars(args).items() if k not in skip}
    if getattr(args, "family", None):
        vals["families"] = tuple(dict.fromkeys(args.family))
    if getattr(args, "history", None) is not None or getattr(args, "shared", None) is not None:
        strat = dict(file_values.get("strategy") or {})
        if args.history is not None:
            strat["history"] = args.history
        if args.shared is not None:
            strat["shared"] = args.shared
        vals["strategy"] = strat
    if getattr(args, "baseline", None):
        schema = dict(file_values.get("schema") or {})
        schema["baseline"] = [c.strip() for c in args.baseline.split(",") if c.strip()]
        vals["schema"] = schema
    return vals


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        file_values = load_config_file(args.config) if args.config else {}
        cfg = build_config(args.command, file_values, _cli_values(args, file_values))
        threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        for path in HANDLERS[args.command](cfg, threads):
            print(path)
    except CfImputeError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, TypeError) as exc:
        print(f"error: invalid_input: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io_error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
