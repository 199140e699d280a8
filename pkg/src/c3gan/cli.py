"""``c3gan`` command line: train, eval, assign, generate, synth-data.

Exit codes: 0 success, 1 internal error, 2 bad input, 3 incompatible or
corrupt checkpoint, 4 evaluation requested on an unlabeled split.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .core import ConfigError, RunConfig, load_config
from .data import DatasetError, load_dataset, read_manifest, synth_shapes, write_synth
from .discriminator import Discriminator
from .evaluation import (
    assign,
    contingency,
    hungarian_accuracy,
    nmi,
    write_assignment,
    write_scores,
)
from .generator import Generator
from .trainer import CheckpointError, check_compatible, load_checkpoint, train
from .visualize import MODES, save_png, tile, write_grid

log = logging.getLogger("c3gan")

EXIT_OK, EXIT_INTERNAL, EXIT_BAD_INPUT, EXIT_CHECKPOINT, EXIT_NO_LABELS = 0, 1, 2, 3, 4
_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING,
           "warning": logging.WARNING, "error": logging.ERROR}


class MissingLabels(Exception):
    pass


class UsageError(Exception):
    pass


def _overrides(pairs: list[str] | None) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _config(args) -> RunConfig:
    overrides = _overrides(args.set)
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def _require(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _load_models(args):
    """Checkpoint state plus the config to run it with.

    ``--set`` overrides apply on top of the stored config, ``--config``
    replaces it; either way the result must match the stored shapes.
    """
    path = Path(_require(args.checkpoint, "--checkpoint"))
    if not path.is_file():
        raise UsageError(f"checkpoint not found: {path}")
    state = load_checkpoint(path)
    if args.config:
        config = _config(args)
    else:
        config = state.config.replace(**_overrides(args.set))
    check_compatible(state, config)
    return state, config


def _discriminator(state, config: RunConfig) -> Discriminator:
    disc = Discriminator.from_config(config)
    disc.load_state_dict(state.discriminator)
    return disc.eval()


def _generator(state, config: RunConfig) -> Generator:
    gen = Generator.from_config(config)
    gen.load_state_dict(state.generator)
    return gen.eval()


def _dataset(data: str | None, config: RunConfig):
    manifest = read_manifest(_require(data, "--data"), config.image_size)
    return manifest, load_dataset(manifest, config.batch_size, config.seed)


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    config = _config(args)
    if args.steps is not None:
        config = config.replace(steps=args.steps)
    out = Path(_require(args.out, "--out"))
    _, dataset = _dataset(args.data, config)
    samples = out / "samples"

    def write_samples(entry, trainer):
        if trainer.step % config.sample_every == 0 or trainer.step == config.steps:
            probe = trainer.probe
            images = trainer.render(probe["z"], probe["index"], probe["eps"])["image"]
            save_png(tile(images, 8, len(images) // 8), samples / f"step-{trainer.step:07d}.png")

    trainer, logs = train(config, dataset, out_dir=out, resume=args.checkpoint, on_step=write_samples)
    print(json.dumps({"step": trainer.step, "steps_run": len(logs), "out": str(out)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    state, config = _load_models(args)
    manifest, dataset = _dataset(args.data, config)
    if not manifest.labeled:
        raise MissingLabels("ground truth required for eval: manifest has unlabeled entries")
    disc = _discriminator(state, config)
    result = assign(dataset.tensor(), disc, config.temperature)
    table = contingency(result.cluster_ids, dataset.labels.numpy(), config.effective_clusters, manifest.num_classes)
    scores = {
        "acc": hungarian_accuracy(table),
        "nmi": nmi(table),
        "Y_eff": config.effective_clusters,
        "Y_true": manifest.num_classes,
        "n": table.n,
    }
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_scores(scores, Path(args.out) / "scores.json")
        write_assignment(dataset.paths, result, Path(args.out) / "assignments.tsv")
    print(json.dumps(scores))
    return EXIT_OK


def cmd_assign(args) -> int:
    state, config = _load_models(args)
    _, dataset = _dataset(args.data, config)
    result = assign(dataset.tensor(), _discriminator(state, config), config.temperature)
    out = Path(_require(args.out, "--out"))
    out.mkdir(parents=True, exist_ok=True)
    write_assignment(dataset.paths, result, out / "assignments.tsv")
    print(json.dumps({"n": len(result), "out": str(out / "assignments.tsv")}))
    return EXIT_OK


def cmd_generate(args) -> int:
    state, config = _load_models(args)
    mode = args.mode or "fixed_c_vary_z"
    if mode not in MODES:
        raise UsageError(f"--mode must be one of {', '.join(MODES)}")
    out = Path(_require(args.out, "--out"))
    path = write_grid(_generator(state, config), mode, out, args.rows, args.cols, args.seed or 0)
    print(json.dumps({"mode": mode, "out": str(path)}))
    return EXIT_OK


def cmd_synth_data(args) -> int:
    out = Path(_require(args.out, "--out"))
    seed = args.seed or 0
    splits = {"train": (args.per_class, seed), "eval": (args.eval_per_class, seed + 1)}
    for split, (n, split_seed) in splits.items():
        if n > 0:
            data = synth_shapes(args.classes, n, args.image_size, rng=split_seed, split=split)
            write_synth(data, out / split)
    print(json.dumps({"out": str(out), "classes": args.classes}))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "assign": cmd_assign,
    "generate": cmd_generate,
    "synth-data": cmd_synth_data,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="c3gan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--data", help="split directory holding manifest.tsv")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
        p.add_argument("--checkpoint", help="checkpoint file (resume point for train)")
        p.add_argument("--mode", help=f"grid layout for generate: {', '.join(MODES)}")
        p.add_argument("--steps", type=int, help="training step budget")
        if name == "generate":
            p.add_argument("--rows", type=int, default=4)
            p.add_argument("--cols", type=int, default=4)
        if name == "synth-data":
            p.add_argument("--classes", type=int, default=4)
            p.add_argument("--per-class", type=int, default=500)
            p.add_argument("--eval-per-class", type=int, default=100)
            p.add_argument("--image-size", type=int, default=64)
    return parser


def _setup_logging() -> None:
    level = _LEVELS.get(os.environ.get("C3_LOG_LEVEL", "info").lower(), logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("c3gan").setLevel(level)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except MissingLabels as exc:
        log.error("%s", exc)
        return EXIT_NO_LABELS
    except CheckpointError as exc:
        log.error("checkpoint: %s", exc)
        return EXIT_CHECKPOINT
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_BAD_INPUT
    except ConfigError as exc:
        log.error("invalid config: %s", "; ".join(f"{k}: {v}" for k, v in exc.violations))
        return EXIT_BAD_INPUT
    except (UsageError, DatasetError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_BAD_INPUT
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
