"""Command-line front end: ``ltl-transfer <subcommand> ...``.

Exit codes: 0 on success, 1 on invalid input, 2 on a runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import ltl
from .edge_matcher import MatchCriterion
from .experiment import ConfigError, ResultTable, load_config, run_experiment, write_report
from .gridworld import MapError, resolve_map
from .learner import BankFormatError, Hyperparams, extract_state_centric_options, load_policy_bank, save_policy_bank, train
from .option_compiler import BankError, compile as compile_options, load_bank, save_bank
from .taskgen import ExhaustedVocabulary, GenParams, InfeasibleParams, SpecType, read_spec_file, sample_set, write_spec_file
from .transfer import TransferConfig, TransferContext, diagnose, transfer, write_trajectory

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (ltl.LtlError, MapError, BankError, BankFormatError, ConfigError, InfeasibleParams, OSError, ValueError)

log = logging.getLogger("ltl_transfer")


def _range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition("-")
    return int(lo), int(hi or lo)


def cmd_train(args) -> int:
    grid = resolve_map(args.map)
    formulas = read_spec_file(args.specs)
    h = Hyperparams(
        alpha=args.alpha, gamma=args.gamma, epsilon=args.epsilon, episodes=args.episodes, max_steps=args.max_steps, seed=args.seed
    )
    bank = train(grid, formulas, h)
    save_policy_bank(bank, args.out)
    print(f"trained {len(bank)} subtask policies for {len(formulas)} formulas -> {args.out}")
    return EXIT_OK


def cmd_compile(args) -> int:
    grid = resolve_map(args.map)
    formulas = read_spec_file(args.specs)
    bank = load_policy_bank(args.policy_bank, grid)
    state_options = extract_state_centric_options(bank, formulas)
    options = compile_options(grid, formulas, state_options, args.rollouts, args.step_cap, args.workers)
    save_bank(options, args.out)
    print(f"compiled {len(options)} transition-centric options -> {args.out}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    grid = resolve_map(args.map)
    bank = load_bank(args.option_bank, grid)
    if args.formula is not None:
        formulas = [ltl.simplify(ltl.to_nnf(ltl.parse(args.formula)))]
    else:
        formulas = read_spec_file(args.specs)
    cfg = TransferConfig(criterion=MatchCriterion.parse(args.criterion), step_budget=args.budget)
    ctx = TransferContext(grid, bank)
    out = Path(args.out)
    results = []
    for i, f in enumerate(formulas):
        outcome = transfer(grid, f, bank, cfg, ctx)
        rec = outcome.summary()
        rec["diagnosis"] = diagnose(outcome)
        results.append(rec)
        if args.trajectory:
            stem = Path(args.trajectory)
            path = stem if len(formulas) == 1 else stem.with_name(f"{stem.stem}_{i}{stem.suffix or '.jsonl'}")
            write_trajectory(outcome, path)
    doc = results[0] if args.formula is not None else results
    out.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    ok = sum(r["status"] == "success" for r in results)
    print(f"{ok}/{len(results)} succeeded -> {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    if args.output:
        from dataclasses import replace

        cfg = replace(cfg, output=args.output)
    table, _ = run_experiment(cfg)
    csv_path, json_path = table.write(cfg.output)
    print(f"{len(table.rows)} rows -> {csv_path}, {json_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for p in args.results:
        rows.extend(ResultTable.read(p).rows)
    paths = write_report(ResultTable(rows), args.out)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_gen_specs(args) -> int:
    t = SpecType.parse(args.type)
    p = GenParams(_range(args.subtasks), _range(args.constraints), seed=args.seed)
    formulas = sample_set(t, args.n, p)
    write_spec_file(args.out, formulas, t, p)
    print(f"{len(formulas)} {t.value} formulas -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="ltl-transfer", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn subtask policies for a spec file", formatter_class=fmt)
    p.add_argument("--map", required=True, help="map file or builtin map name")
    p.add_argument("--specs", required=True, help="spec file, one formula per line")
    p.add_argument("--out", required=True, help="policy bank JSON to write")
    d = Hyperparams()
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--gamma", type=float, default=d.gamma)
    p.add_argument("--epsilon", type=float, default=d.epsilon)
    p.add_argument("--episodes", type=int, default=None, help="default: 200 per map cell")
    p.add_argument("--max-steps", type=int, default=d.max_steps)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compile", help="compile transition-centric options", formatter_class=fmt)
    p.add_argument("--map", required=True)
    p.add_argument("--specs", required=True, help="the spec file the policy bank was trained on")
    p.add_argument("--policy-bank", required=True)
    p.add_argument("--rollouts", type=int, default=1, help="rollouts per start cell")
    p.add_argument("--step-cap", type=int, default=None, help="default: 4 * (width + height)")
    p.add_argument("--workers", type=int, default=1, help="overridden by LTL_TRANSFER_WORKERS")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("transfer", help="run unseen formulas with an option bank", formatter_class=fmt)
    p.add_argument("--map", required=True)
    p.add_argument("--option-bank", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--formula", help="a single formula")
    g.add_argument("--specs", help="spec file of formulas")
    p.add_argument("--criterion", default="relaxed", choices=[c.value for c in MatchCriterion])
    p.add_argument("--budget", type=int, default=500, help="global step budget")
    p.add_argument("--out", required=True, help="outcome JSON to write")
    p.add_argument("--trajectory", help="JSON-lines step log to write")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("experiment", help="run an experiment grid from a YAML config", formatter_class=fmt)
    p.add_argument("config")
    p.add_argument("--output", help="override the config's output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="success matrices and failure breakdowns", formatter_class=fmt)
    p.add_argument("results", nargs="+", help="results.csv or results.json files")
    p.add_argument("--out", required=True, help="directory for the report CSVs")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gen-specs", help="sample a spec file", formatter_class=fmt)
    p.add_argument("--type", required=True, choices=[t.value for t in SpecType])
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--subtasks", default="2-5", help="range lo-hi")
    p.add_argument("--constraints", default="1-3", help="range lo-hi")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_specs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ExhaustedVocabulary as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except VALIDATION_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:  # noqa: BLE001
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
