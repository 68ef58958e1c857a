"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import torch

from .archive import PROMPTER_PREFIX, ArchiveError, WeightArchive, apply_archive, archive_module, load_archive, save_archive
from .budget import budget_csv, budget_for_config, sweep, sweep_csv, sweep_table
from .config import ConfigError, RunConfig, parse_config
from .evalkit.attributes import SchemaError
from .evalkit.io import DataError, load_benchmark, write_boxes
from .evalkit.metrics import EmptyEvaluationError, attribute_breakdown, evaluate
from .evalkit.report import export_report, summary_text
from .foundation import DimensionError, Foundation
from .prompters import init_prompter_bank
from .tokens import ShapeError
from .training import InputError, NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CHECKPOINT_FILE = "prompters.mfwa"
CHECKPOINT_MANIFEST = "checkpoint.txt"
LOSS_FILE = "losses.csv"
LOG_FILE = "train.log"

log = logging.getLogger("midfusion")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None and not Path(args.config).is_file():
        raise DataError(f"config file not found: {args.config}")
    return parse_config(args.config, args.set)


def _foundation(cfg: RunConfig, weights: str | None) -> tuple[Foundation, WeightArchive | None]:
    if weights is None:
        return Foundation(cfg.tracker.foundation, seed=cfg.train.seed), None
    archive = load_archive(weights)
    foundation = Foundation(cfg.tracker.foundation, init=False)
    apply_archive(archive, foundation)
    return foundation, archive


def _parse_range(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            values = list(range(int(lo), int(hi) + 1))
        else:
            values = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad sweep {text!r}; expected LO..HI or a comma list") from exc
    if not values:
        raise UsageError(f"empty sweep {text!r}")
    return values


# ---------------------------------------------------------------------------
# commands


def cmd_track(args) -> int:
    from .sequence import ingest_sequence, track_sequence

    cfg = _config(args)
    foundation, archive = _foundation(cfg, args.weights)
    bank = init_prompter_bank(cfg.tracker, cfg.train.seed)
    source = load_archive(args.prompters) if args.prompters else archive
    if source is not None and any(n.startswith(PROMPTER_PREFIX) for n in source.names()):
        apply_archive(source, bank, PROMPTER_PREFIX)
    seq = ingest_sequence(args.sequence, cfg.eval.attribute_schema)
    boxes = track_sequence(bank, foundation, seq, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_boxes(out, boxes)
    print(f"{seq.name}: {len(boxes)} frames -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .synthetic import generate_synthetic
    from .training import train

    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / LOG_FILE, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    try:
        torch.manual_seed(cfg.train.seed)
        foundation, _ = _foundation(cfg, args.weights)
        bank = init_prompter_bank(cfg.tracker, cfg.train.seed)
        data = generate_synthetic(cfg.train.seed, cfg.train.synthetic_pairs, cfg.tracker.foundation)
        log.info("config %s, %d steps, %d synthetic pairs", cfg.hash, cfg.train.total_steps, len(data))
        started = time.time()
        result = train(bank, foundation, data, cfg.train)
        log.info("finished in %.1f s", time.time() - started)
    finally:
        log.removeHandler(handler)
        handler.close()
    save_archive(archive_module(bank, PROMPTER_PREFIX), out / CHECKPOINT_FILE)
    (out / LOSS_FILE).write_text(result.csv(), encoding="utf-8")
    totals = result.totals
    manifest = [f"config_hash = {cfg.hash}", f"steps = {len(totals)}",
                f"initial_loss = {totals[0]:.8f}", f"final_loss = {totals[-1]:.8f}",
                f"checkpoint = {CHECKPOINT_FILE}", "", cfg.to_text()]
    (out / CHECKPOINT_MANIFEST).write_text("\n".join(manifest), encoding="utf-8")
    print(f"trained {len(totals)} steps: loss {totals[0]:.4f} -> {totals[-1]:.4f}; checkpoint in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    records, schema = load_benchmark(args.manifest, args.results)
    ev = evaluate(records, cfg.eval)
    breakdown = None
    if all(r.attributes is not None for r in records):
        breakdown = attribute_breakdown(records, schema, cfg.eval)
    export_report(ev, args.out, breakdown)
    sys.stdout.write(summary_text(ev, breakdown))
    return EXIT_OK


def cmd_params(args) -> int:
    cfg = _config(args)
    budget = budget_for_config(cfg.tracker)
    sys.stdout.write(budget_csv(budget) if args.csv else budget.table())
    return EXIT_OK


def cmd_cost(args) -> int:
    cfg = _config(args)
    L = cfg.tracker.foundation.num_blocks
    locations = _parse_range(args.sweep) if args.sweep else [cfg.tracker.first_stage_blocks]
    bad = [n for n in locations if not 1 <= n <= L - 1]
    if bad:
        raise UsageError(f"fusion locations must lie in 1..{L - 1}, got {bad}")
    reports = sweep(cfg.tracker, locations)
    sys.stdout.write(sweep_csv(reports) if args.csv else sweep_table(reports))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    return EXIT_OK if run_selftest() == 0 else EXIT_NUMERIC


def cmd_init(args) -> int:
    cfg = _config(args)
    foundation = Foundation(cfg.tracker.foundation, seed=cfg.train.seed)
    arrays = archive_module(foundation).subset("")
    if args.prompters:
        arrays.update({PROMPTER_PREFIX + k: v for k, v in load_archive(args.prompters).subset(PROMPTER_PREFIX).items()})
    save_archive(WeightArchive.from_arrays(arrays), args.out)
    print(f"wrote {len(arrays)} tensors to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import write_toy_benchmark

    manifest = write_toy_benchmark(args.out, args.sequences, args.frames, args.seed, schema=args.schema)
    print(f"toy benchmark manifest: {manifest}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="midfusion", description="RGB-T middle-fusion prompt tracker")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp, required=False):
        sp.add_argument("--config", required=required, help="flat key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        return sp

    sp = with_config(sub.add_parser("track", help="track one sequence"))
    sp.add_argument("--sequence", required=True)
    sp.add_argument("--weights", required=True, help="foundation archive (may also hold prompter/ tensors)")
    sp.add_argument("--prompters", help="prompter checkpoint written by train")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_track)

    sp = with_config(sub.add_parser("train", help="train the prompters on synthetic pairs"))
    sp.add_argument("--weights", help="foundation archive; random foundation from the seed if omitted")
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("eval", help="score result files against a benchmark manifest"))
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--results", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = with_config(sub.add_parser("params", help="parameter budget"))
    sp.add_argument("--csv", action="store_true")
    sp.set_defaults(func=cmd_params)

    sp = with_config(sub.add_parser("cost", help="analytic cost per fusion location"))
    sp.add_argument("--sweep", help="fusion locations, LO..HI or comma list")
    sp.add_argument("--csv", action="store_true")
    sp.set_defaults(func=cmd_cost)

    sp = sub.add_parser("selftest", help="run the fast invariant checks")
    sp.set_defaults(func=cmd_selftest)

    sp = with_config(sub.add_parser("init", help="write a randomly initialized foundation archive"))
    sp.add_argument("--prompters", help="also embed this prompter checkpoint")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_init)

    sp = sub.add_parser("synth", help="write a small synthetic benchmark")
    sp.add_argument("--out", required=True)
    sp.add_argument("--sequences", type=int, default=4)
    sp.add_argument("--frames", type=int, default=6)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--schema", default="lasher", choices=["lasher", "rgbt234"])
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, SchemaError, ArchiveError, EmptyEvaluationError, InputError,
            DimensionError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
