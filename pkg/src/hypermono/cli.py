"""Command-line entry point.

Exit codes: 0 success, 1 validation failure (bad flags, failed checks),
2 numeric failure (non-finite values, gradient check over tolerance).
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

from . import harness as H
from .checks import intersection_bound_scan, shrink_containment_scan
from .gradcheck import grad_check
from .hkg import (
    PUBLISHED_COUNTS,
    SubsetError,
    SubsetMode,
    build_subset,
    check_monotonicity,
    compare_published_counts,
    dataset_stats,
    load_dataset,
    save_dataset,
)
from .model import ConfigError, HyperMono
from .synthetic import SyntheticSpec, disambiguation_spec, gen_synthetic
from .tensor import NumericError

GRAD_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _subset_mode(text: str) -> SubsetMode:
    try:
        return SubsetMode.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hypermono", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text, data=False, out=False, seed=True):
        sp = sub.add_parser(name, help=help_text)
        if data:
            sp.add_argument("--data", required=data == "required", type=Path, help="dataset directory")
        if out:
            sp.add_argument("--out", required=out == "required", type=Path, help="output directory")
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        return sp

    add("stats", "dataset statistics and published-count comparison", data="required", out=True, seed=False)
    sp = add("subset", "build a fixed-qualifier or fixed-percentage subset", data="required", out="required")
    sp.add_argument("--mode", required=True, type=_subset_mode)
    sp = add("synth", "write a seeded synthetic dataset", out="required")
    sp.add_argument("--kind", choices=("basic", "disambiguation"), default="basic")
    for name, text in (("train", "train a model"), ("gradcheck", "finite-difference check of the joint loss")):
        sp = add(name, text, data="required" if name == "train" else False, out="required" if name == "train" else True)
        sp.add_argument("--preset", choices=sorted(H.PRESETS), default="desk-scale")
        sp.add_argument("--config", type=Path, help="key = value overrides applied on top of the preset")
        if name == "gradcheck":
            sp.add_argument("--samples", type=_positive, default=6, help="coordinates probed per parameter block")
    sp = add("eval", "filtered ranking of a trained checkpoint", data="required", out="required", seed=False)
    sp.add_argument("--checkpoint", type=Path, help="defaults to <out>/checkpoint.hmck")
    sp.add_argument("--stage", choices=H.STAGES, default=None)
    sp.add_argument("--split", choices=("train", "valid", "test"), default="test")
    sp = add("conecheck", "shrink containment and intersection bound scans", out=True)
    sp.add_argument("--samples", type=_positive, default=10_000)
    sp = add("monocheck", "oracle monotonicity over sampled query pairs", data=True, out=True)
    sp.add_argument("--samples", type=_positive, default=10_000)
    return p


def _write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _train_config(args) -> H.TrainConfig:
    cfg = H.preset(args.preset)
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        cfg = H.load_config(args.config, cfg)
    return replace(cfg, seed=args.seed)


def cmd_stats(args) -> int:
    bundle = load_dataset(args.data)
    stats = dataset_stats(bundle)
    rows = [[k, stats[k]] for k in ("train", "valid", "test", "entities", "relations", "qualified_ratio")]
    for k, v in rows:
        print(f"{k}: {'-' if v is None else v}")
    name = bundle.metadata["scenario"]
    status = 0
    if name in PUBLISHED_COUNTS:
        mismatches = compare_published_counts(stats, name)
        for m in mismatches:
            print(f"mismatch {m}")
        print(f"published counts {name}: {'match' if not mismatches else 'MISMATCH'}")
        status = 1 if mismatches else 0
    if args.out is not None:
        per_split = [[name, s["facts"], s["entities"], s["relations"], repr(s["qualified_ratio"])]
                     for name, s in stats["per_split"].items()]
        _write_rows(args.out / "stats.csv", ["split", "facts", "entities", "relations", "qualified_ratio"],
                    per_split)
    return status


def cmd_subset(args) -> int:
    bundle = load_dataset(args.data)
    sub = build_subset(bundle, args.mode, args.seed)
    save_dataset(sub, args.out)
    stats = dataset_stats(sub)
    print(f"subset {args.mode}: train {stats['train']}, test {stats['test']}, "
          f"entities {stats['entities']}, relations {stats['relations']}")
    return 0


def cmd_synth(args) -> int:
    spec = disambiguation_spec(args.seed) if args.kind == "disambiguation" else SyntheticSpec(seed=args.seed)
    bundle = gen_synthetic(spec)
    save_dataset(bundle, args.out)
    print(f"synthetic ({args.kind}): {len(bundle.train)} train facts, {bundle.entities.n_real} entities")
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    bundle = load_dataset(args.data)
    result = H.train(cfg, bundle, args.out)
    print(f"best epoch: {result.best_epoch}")
    print(f"final epoch loss: {result.epoch_losses[-1]!r}")
    print(f"checkpoint: {result.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    bundle = load_dataset(args.data)
    ckpt = args.checkpoint or args.out / H.CHECKPOINT_NAME
    if not Path(ckpt).is_file():
        raise UsageError(f"checkpoint not found: {ckpt}")
    config = H.load_config(Path(ckpt).parent / H.CONFIG_NAME)
    report = H.evaluate(ckpt, bundle, args.split, args.stage, config, args.out)
    print("direction,MRR,H1,H3,H10")
    for r in report.rows():
        print(",".join([r[0]] + [f"{x:.6f}" for x in r[1:]]))
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _train_config(args)
    bundle = gen_synthetic(SyntheticSpec(entities=12, relations=3, facts=24, seed=args.seed))
    model = HyperMono(cfg.model_config(), bundle.n_entities, bundle.n_relations, cfg.seed)
    facts = bundle.train[:4]

    def closure():
        out, _ = model.joint_forward(facts, bundle.train_graph)
        return out.loss

    report = grad_check(closure, model.params, max_coords=args.samples, seed=args.seed, order=4)
    worst = max(report.values())
    for name, err in report.items():
        print(f"{name}: {err:.3e}")
    print(f"max relative error: {worst:.3e}")
    if args.out is not None:
        _write_rows(args.out / "gradcheck.csv", ["block", "max_rel_err"],
                    [[k, repr(v)] for k, v in report.items()])
    return 0 if worst < GRAD_TOLERANCE else 2


def cmd_conecheck(args) -> int:
    shrink = shrink_containment_scan(args.samples, seed=args.seed)
    inter = intersection_bound_scan(args.samples, seed=args.seed)
    print(f"shrink containment: {shrink.instances} instances, {shrink.violations} violations")
    print(f"lower-edge identity max error: {shrink.lower_edge_error:.3e}")
    print(f"intersection bound: {inter.instances} instances, {inter.violations} violations")
    if args.out is not None:
        _write_rows(args.out / "conecheck.csv", ["check", "instances", "violations", "max_error"], [
            ["shrink_containment", shrink.instances, shrink.violations, repr(shrink.lower_edge_error)],
            ["intersection_bound", inter.instances, inter.violations, repr(inter.max_excess)],
        ])
    ok = shrink.ok and inter.ok and shrink.lower_edge_error <= 1e-12
    return 0 if ok else 1


def cmd_monocheck(args) -> int:
    bundle = load_dataset(args.data) if args.data is not None else gen_synthetic(SyntheticSpec(seed=args.seed))
    report = check_monotonicity(bundle.graph, args.samples, args.seed)
    print(f"pairs: {report.samples}")
    print(f"violations: {len(report.violations)}")
    print(f"mean answers (fewer qualifiers): {report.mean_answers_small:.4f}")
    print(f"mean answers (more qualifiers): {report.mean_answers_large:.4f}")
    if args.out is not None:
        _write_rows(args.out / "monocheck.csv", ["pairs", "violations"], [[report.samples, len(report.violations)]])
    return 0 if report.ok else 1


COMMANDS = {
    "stats": cmd_stats,
    "subset": cmd_subset,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "conecheck": cmd_conecheck,
    "monocheck": cmd_monocheck,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError, SubsetError, H.CompatibilityError, FileNotFoundError,
            ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
