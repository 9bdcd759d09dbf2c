"""Command-line entry point: train, sample, eval, ablate, task, print-defaults.

Every command is deterministic given (config, input files, seed): module
seeds are derived from the master seed, outputs carry no timestamps (except
the wall-time line in task reports), and reruns produce byte-identical
checkpoints and sample files.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, apply_override, parse_config, render_config
from .graphs import DatasetSpec, NoiseSchedule, generate_dataset, read_graph_dir
from .metrics import MmdReport, mmd_report
from .model import (
    EdpGnn,
    ModelConfig,
    load_checkpoint,
    read_checkpoint_config,
    save_checkpoint,
)
from .sampler import SamplerConfig, sample_set, write_samples
from .tasks import TASKS, TaskReport, run_task_experiment
from .training import TrainConfig, train, validate, write_loss_csv


def _derived_seeds(master: int) -> dict[str, int]:
    """Independent module seeds spawned from the master seed."""
    children = np.random.SeedSequence(master).spawn(5)
    names = ("dataset", "model", "train", "sampler", "heldout")
    return {
        name: int(np.random.default_rng(child).integers(2**63))
        for name, child in zip(names, children)
    }


def dataset_spec_from(cfg: RunConfig, seed: int, count: int | None = None) -> DatasetSpec:
    d = cfg.dataset
    return DatasetSpec(
        kind=d.kind, count=count if count is not None else d.count, seed=seed,
        n=d.n, n_min=d.n_min, n_max=d.n_max, p=d.p, weighted=d.weighted,
        path=d.path, host_n=d.host_n, host_attach=d.host_attach,
    )


def model_config_from(cfg: RunConfig, extra_feature_dim: int = 0) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        layers=m.layers, msg_steps=m.msg_steps, channels=m.channels,
        hidden=m.hidden, node_width=m.node_width,
        levels=len(cfg.schedule.sigmas), extra_feature_dim=extra_feature_dim,
        learnable_adj=m.learnable_adj, multi_channel=m.multi_channel,
    )


def _write_provenance(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(f"# edpgnn {__version__}\n" + render_config(cfg))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> Path:
    out = Path(cfg.run.out)
    _write_provenance(cfg, out)
    seeds = _derived_seeds(cfg.run.seed)
    dataset = generate_dataset(dataset_spec_from(cfg, seeds["dataset"]))
    schedule = NoiseSchedule(cfg.schedule.sigmas)
    model = EdpGnn(model_config_from(cfg), seed=seeds["model"])
    tc = TrainConfig(
        lr=cfg.train.lr, batch_size=cfg.train.batch_size, steps=cfg.train.steps,
        seed=seeds["train"], val_size=cfg.train.val_size,
        checkpoint_every=cfg.train.checkpoint_every,
    )
    result = train(model, dataset, tc, schedule)
    ckpt = out / "checkpoint.ckpt"
    save_checkpoint(model, schedule, ckpt)
    write_loss_csv(result.curves, schedule.levels, out / "curves.csv")
    return ckpt


def cmd_sample(cfg: RunConfig, checkpoint: Path | str, count: int,
               dump_continuous: bool = False) -> Path:
    ckpt_config, ckpt_schedule = read_checkpoint_config(checkpoint)
    expected = model_config_from(cfg)
    for field_name in (
        "layers", "msg_steps", "channels", "hidden", "node_width", "levels",
        "extra_feature_dim", "learnable_adj", "multi_channel",
    ):
        have = getattr(ckpt_config, field_name)
        want = getattr(expected, field_name)
        if have != want:
            raise ValueError(
                f"checkpoint architecture mismatch: {field_name} is {have} "
                f"in the checkpoint but {want} in the config"
            )
    if ckpt_schedule.sigmas != tuple(cfg.schedule.sigmas):
        raise ValueError(
            "checkpoint architecture mismatch: sigmas are "
            f"{ckpt_schedule.sigmas} in the checkpoint but {tuple(cfg.schedule.sigmas)} in the config"
        )
    model, schedule = load_checkpoint(checkpoint)
    out = Path(cfg.run.out)
    _write_provenance(cfg, out)
    seeds = _derived_seeds(cfg.run.seed)
    train_set = generate_dataset(dataset_spec_from(cfg, seeds["dataset"]))
    sampler_cfg = SamplerConfig(
        eps_step=cfg.sampler.eps_step, eps_s=cfg.sampler.eps_s,
        steps_per_level=cfg.sampler.steps_per_level, schedule=schedule,
        seed=seeds["sampler"],
    )
    results = sample_set(model, count, train_set, sampler_cfg,
                         workers=cfg.run.workers,
                         return_continuous=dump_continuous)
    write_samples(results, out, with_continuous=dump_continuous)
    return out


def cmd_eval(cfg: RunConfig, samples_dir: Path | str,
             reference_dir: Path | str) -> MmdReport:
    samples, _ = read_graph_dir(samples_dir)
    reference, _ = read_graph_dir(reference_dir)
    report = mmd_report(samples, reference, bandwidth=cfg.eval.bandwidth)
    out = Path(cfg.run.out)
    _write_provenance(cfg, out)
    (out / "mmd_report.txt").write_text(report.to_text())
    (out / "mmd_report.csv").write_text(report.to_csv_row())
    return report


@dataclass
class AblateRow:
    learnable_adj: bool
    multi_channel: bool
    train_loss: float
    test_loss: float


def cmd_ablate(cfg: RunConfig, test_count: int = 32) -> list[AblateRow]:
    """Train the 2x2 (learnable adjacency x multi-channel) grid with a shared
    seed and budget; report final train/test DSM loss per cell."""
    out = Path(cfg.run.out)
    _write_provenance(cfg, out)
    seeds = _derived_seeds(cfg.run.seed)
    dataset = generate_dataset(dataset_spec_from(cfg, seeds["dataset"]))
    test_set = generate_dataset(dataset_spec_from(cfg, seeds["heldout"], count=test_count))
    schedule = NoiseSchedule(cfg.schedule.sigmas)
    rows: list[AblateRow] = []
    for learnable in (False, True):
        for multi in (False, True):
            variant_cfg = replace(model_config_from(cfg),
                                  learnable_adj=learnable, multi_channel=multi)
            model = EdpGnn(variant_cfg, seed=seeds["model"])
            tc = TrainConfig(
                lr=cfg.train.lr, batch_size=cfg.train.batch_size,
                steps=cfg.train.steps, seed=seeds["train"],
                val_size=cfg.train.val_size,
                checkpoint_every=cfg.train.checkpoint_every,
            )
            train(model, dataset, tc, schedule)
            fit_loss = validate(model, dataset, schedule, stream_seed=7)
            test_loss = validate(model, test_set, schedule, stream_seed=11)
            rows.append(AblateRow(learnable, multi, fit_loss.total, test_loss.total))
    lines = ["learnable_adj multi_channel train_loss test_loss"]
    for row in rows:
        lines.append(
            f"{'Y' if row.learnable_adj else 'N'} "
            f"{'Y' if row.multi_channel else 'N'} "
            f"{row.train_loss:.6f} {row.test_loss:.6f}"
        )
    (out / "ablation.txt").write_text("\n".join(lines) + "\n")
    return rows


def cmd_task(cfg: RunConfig) -> TaskReport:
    out = Path(cfg.run.out)
    _write_provenance(cfg, out)
    started = time.monotonic()
    report = run_task_experiment(
        cfg.task.name, cfg.task.variant, budget=cfg.task.budget,
        seed=cfg.run.seed, lr=cfg.task.lr, batch_size=cfg.task.batch_size,
        test_size=cfg.task.test_size, base_config=model_config_from(cfg),
    )
    wall = time.monotonic() - started
    (out / "task_report.txt").write_text(report.to_text(wall_time=wall))
    return report


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="config file path")
    p.add_argument("--seed", type=int, help="master seed override")
    p.add_argument("--out", type=Path, help="output directory override")
    p.add_argument("--workers", type=int, help="thread/process cap override")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config key (repeatable)")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = parse_config(args.config.read_text()) if args.config else RunConfig()
    for override in args.set:
        apply_override(cfg, override)
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out is not None:
        cfg.run.out = str(args.out)
    if args.workers is not None:
        cfg.run.workers = args.workers
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edpgnn",
        description="score-based graph generation: train, sample, evaluate",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a score network on a dataset")
    _add_common(p)

    p = sub.add_parser("sample", help="sample graphs from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--dump-continuous", action="store_true",
                   help="also write pre-quantization matrices")

    p = sub.add_parser("eval", help="MMD metrics between two graph directories")
    _add_common(p)
    p.add_argument("--samples", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True)

    p = sub.add_parser("ablate", help="2x2 learnable/multi-channel ablation grid")
    _add_common(p)

    p = sub.add_parser("task", help="edge-labeling experiment (SP / MST)")
    _add_common(p)
    p.add_argument("--list", action="store_true", help="list task names and exit")

    p = sub.add_parser("print-defaults", help="print the default config")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "print-defaults":
            print(render_config(RunConfig()), end="")
            return 0
        if args.command == "task" and args.list:
            print(" ".join(TASKS))
            return 0
        cfg = resolve_config(args)
        if args.command == "train":
            ckpt = cmd_train(cfg)
            print(f"checkpoint written to {ckpt}")
        elif args.command == "sample":
            out = cmd_sample(cfg, args.checkpoint, args.count,
                             dump_continuous=args.dump_continuous)
            print(f"samples written to {out}")
        elif args.command == "eval":
            report = cmd_eval(cfg, args.samples, args.reference)
            print(report.to_text(), end="")
        elif args.command == "ablate":
            rows = cmd_ablate(cfg)
            print((Path(cfg.run.out) / "ablation.txt").read_text(), end="")
        elif args.command == "task":
            report = cmd_task(cfg)
            print(report.to_text(), end="")
        else:  # pragma: no cover
            raise AssertionError(args.command)
        return 0
    except (ValueError, RuntimeError, OSError) as exc:
        message = " ".join(str(exc).split())
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
