"""Command-line entry point.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .errors import NumericalError, UnknownCommand, ValidationError
from .gradcheck import run_suite
from .model import dumps_checkpoint, load_checkpoint
from .numeric import SeededRng, beta_sample
from .pairing import STRATEGIES, load_manifest, pair_admissible, save_manifest
from .synth import COMPRESSION_LEVELS, World
from .trainer import evaluate, format_results, metrics_row, neg_count, run_ablation, train

logger = logging.getLogger("realcl")

AXES = ("strategy", "fusion_mode", "counts", "fused_negative_mode")
BETA_CASES = ((0.8, 0.8), (1.0, 1.0), (2.0, 5.0))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UnknownCommand(f"{self.prog}: {message}")


def _add_config(p):
    p.add_argument("--config", help="YAML run configuration (defaults used when omitted)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="realcl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic manifest")
    _add_config(p)
    p.add_argument("--out", required=True, help="manifest file to write")
    p.add_argument("--split", default="train", help="split name; 'test' yields held-out videos")

    p = sub.add_parser("train", help="stage-1 contrastive training then stage-2 linear probe")
    _add_config(p)
    p.add_argument("--out", required=True, help="checkpoint file to write")
    p.add_argument("--manifest", help="training manifest (default: generate the train split)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True, help="checkpoint written by 'train'")
    p.add_argument("--manifest", required=True, help="evaluation manifest")
    p.add_argument("--compression", default="none", choices=sorted(COMPRESSION_LEVELS),
                   help="compression perturbation applied before scoring")
    p.add_argument("--out", required=True, help="results CSV to write")

    p = sub.add_parser("ablate", help="run an ablation sweep")
    _add_config(p)
    p.add_argument("--axes", default="strategy",
                   help=f"comma-separated subset of {','.join(AXES)}")
    p.add_argument("--seeds", type=int, default=1, help="number of training seeds per cell")
    p.add_argument("--out", required=True, help="results CSV to write")

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    _add_config(p)
    p.add_argument("--configs", type=int, default=20, help="random configurations per loss spec")

    p = sub.add_parser("pairs", help="list admissible positive pairs")
    p.add_argument("--manifest", required=True, help="manifest file")
    p.add_argument("--strategy", required=True, choices=STRATEGIES, help="pairing strategy")
    p.add_argument("--limit", type=int, default=20, help="maximum number of pairs printed")

    p = sub.add_parser("beta-test", help="moment tests for the Beta sampler")
    p.add_argument("--samples", type=int, default=100_000, help="draws per shape pair")
    p.add_argument("--seed", type=int, default=0, help="sampler seed")
    return parser


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8")


def cmd_synth(args):
    cfg = config_mod.load(args.config, args.set)
    save_manifest(World(cfg.world).manifest(args.split), args.out)
    return 0


def cmd_train(args):
    cfg = config_mod.load(args.config, args.set)
    if args.manifest:
        manifest = load_manifest(args.manifest)
    else:
        manifest = World(cfg.world).manifest("train")
    params, log = train(cfg.train, manifest)
    meta = {
        "run": config_mod.RunConfig(cfg.world, cfg.train).to_dict(),
        "stage1_epoch_losses": log.epoch_losses,
        "stage1_final_loss": log.final_loss,
        "stage2_losses": log.stage2_losses,
        "stage2_train_acc": log.stage2_train_acc,
    }
    _write(args.out, dumps_checkpoint(params, meta))
    return 0


def cmd_eval(args):
    params, meta = load_checkpoint(args.ckpt)
    manifest = load_manifest(args.manifest)
    run = config_mod.from_dict(meta["run"])
    world = World(run.world)
    seed = run.train.seed
    m = evaluate(params, manifest, args.compression, world.artifact_direction, seed)
    row = metrics_row(
        m, cell_id="eval", strategy=run.train.strategy, fusion_mode=run.train.fusion_mode,
        fused_negative_mode=run.train.loss.fused_negative_mode,
        positive_budget=run.train.positive_budget if run.train.fusion_mode != "off" else 0,
        neg_count=neg_count(run.train), seed=seed, stage1_final_loss=float(meta["stage1_final_loss"]),
    )
    _write(args.out, format_results([row]))
    print(f"tpr={m.tpr:.4f} fpr={m.fpr:.4f} auc={m.auc:.4f} acc={m.acc:.4f} n={m.n_eval}")
    return 0


def cmd_ablate(args):
    cfg = config_mod.load(args.config, args.set)
    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    bad = [a for a in axes if a not in AXES]
    if bad:
        raise ValidationError(f"unknown axis {bad[0]!r}; choose from {AXES}")
    if args.seeds < 1:
        raise ValidationError("--seeds must be >= 1")
    seeds = [cfg.train.seed + i for i in range(args.seeds)]
    rows = run_ablation(cfg.world, cfg.train, axes, seeds)
    _write(args.out, format_results(rows))
    return 0


def cmd_gradcheck(args):
    cfg = config_mod.load(args.config, args.set)
    results = run_suite(args.configs, cfg.train.seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{status:4s} {r.loss_spec:14s} seed={r.seed:<4d} max_rel_err={r.max_rel_error:.2e} ({r.worst_param})")
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return 2 if failed else 0


def cmd_pairs(args):
    manifest = load_manifest(args.manifest)
    recs = manifest.records
    shown = 0
    for i in range(len(recs)):
        for j in range(i, len(recs)):
            if shown >= args.limit:
                return 0
            if pair_admissible(recs[i], recs[j], args.strategy):
                print(f"{recs[i].sample_id}\t{recs[j].sample_id}")
                shown += 1
    return 0


def beta_moment_report(samples: int, seed: int):
    """Rows of (alpha, beta, mean, var, mean_target, var_target, passed)."""
    rows = []
    # tolerances are calibrated at 1e5 draws and widen as 1/sqrt(n)
    widen = max(1.0, np.sqrt(100_000 / samples))
    for a, b in BETA_CASES:
        draws = beta_sample(SeededRng(seed).child(f"beta:{a}:{b}"), a, b, size=samples)
        mean_t = a / (a + b)
        var_t = a * b / ((a + b) ** 2 * (a + b + 1))
        mean, var = float(draws.mean()), float(draws.var())
        ok = abs(mean - mean_t) < 0.01 * widen and abs(var - var_t) < 0.005 * widen
        rows.append((a, b, mean, var, mean_t, var_t, ok))
    return rows


def cmd_beta_test(args):
    if args.samples < 2:
        raise ValidationError("--samples must be >= 2")
    rows = beta_moment_report(args.samples, args.seed)
    for a, b, mean, var, mt, vt, ok in rows:
        print(f"{'ok' if ok else 'FAIL':4s} Beta({a}, {b}) mean={mean:.5f} (target {mt:.5f}) "
              f"var={var:.5f} (target {vt:.5f})")
    return 0 if all(r[-1] for r in rows) else 2


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "pairs": cmd_pairs,
    "beta-test": cmd_beta_test,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            raise UnknownCommand("no command given")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
