# Copyright 2024 The lowdata-audio Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

from typing import Sequence

import os
import sys
import logging
import argparse

from dotenv import load_dotenv

from lowdata_audio.errors import LowDataError
from lowdata_audio.frontend import MEL64, get_preset
from lowdata_audio.labctl.dataset import load_clips, read_manifest
from lowdata_audio.labctl.experiment import load_plan, run_experiment, subsample_train
from lowdata_audio.labctl.results import ResultsTable, aggregate as aggregate_results, compression_gains, emit, read_results
from lowdata_audio.labctl.synth import synth_dataset
from lowdata_audio.ndgrad.optim import OptimizerConfig
from lowdata_audio.parser import PLANS_DIR, argument_parser
from lowdata_audio.protohead import ProtoConfig
from lowdata_audio.transfer import (
    fine_tune_proto,
    fine_tune_softmax,
    pretext_pretrain,
    read_checkpoint,
    save_checkpoint,
    write_checkpoint
)
from lowdata_audio.utils import make_rng, pprint_dict, run_name, timestamp


logger = logging.getLogger(__name__)


def _out_dir(out: str | None) -> str:
    path = out or os.path.join("runs", run_name())
    os.makedirs(path, exist_ok=True)
    return path


def synth(args: argparse.Namespace) -> None:
    out = args.out or os.path.join("data", f"synth-{args.classes}x{args.clips_per_class}-{args.seed}")
    manifest = synth_dataset(out, args.classes, args.clips_per_class, seed=args.seed, layout=args.layout)
    print(f"Wrote {len(manifest.entries)} clips to {os.path.join(out, 'manifest.csv')}")


def _run_grid(args: argparse.Namespace, config: str, strategy: str, **overrides) -> None:
    manifest = read_manifest(args.manifest)
    tables = []
    for n in args.n:
        plan = load_plan(config, strategy=strategy, n=n, m=args.m, seed=args.seed, checkpoint=args.checkpoint, **overrides)
        logger.info(f"Running plan:\n{pprint_dict(vars(plan))}")
        tables.append(run_experiment(plan, manifest, workers=args.workers))
    results = ResultsTable.concat(tables)

    out = _out_dir(args.out)
    emit(results, os.path.join(out, "results.csv"), format="csv")
    if len(results.errors) < len(results):
        emit(results, os.path.join(out, "curve.csv"), format="curve_csv", reference=getattr(args, "reference", None))
        print(aggregate_results(results, getattr(args, "reference", None)).to_string(index=False))
    print(f"Wrote results to {out}")


def run(args: argparse.Namespace) -> None:
    _run_grid(
        args,
        args.config,
        args.strategy,
        distance=args.distance,
        compression=args.compression,
        record_timing=False if args.no_timing else None,
    )


def baseline(args: argparse.Namespace) -> None:
    _run_grid(args, os.path.join(PLANS_DIR, "full.json"), args.strategy)


def aggregate(args: argparse.Namespace) -> None:
    results = read_results(args.results)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.results)), "curve.csv")
    emit(results, out, format="curve_csv", reference=args.reference)
    if args.gains:
        compression_gains(results).to_csv(args.gains, index=False, float_format="%.17g")
    print(aggregate_results(results, args.reference).to_string(index=False))


def pretrain(args: argparse.Namespace) -> None:
    manifest = read_manifest(args.manifest)
    clips = load_clips(manifest, manifest.entries, MEL64)
    ckpt = pretext_pretrain(
        clips,
        manifest.n_classes,
        args.epochs,
        preset=MEL64,
        channels=args.channels,
        dense_units=args.dense_units,
        opt=OptimizerConfig(batch_size=args.batch_size),
        rng=args.seed,
    )
    out = args.out or os.path.join("checkpoints", f"pretext-{timestamp()}.ldac")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_checkpoint(ckpt, out)
    print(f"Wrote checkpoint {out}")


def finetune(args: argparse.Namespace) -> None:
    manifest = read_manifest(args.manifest)
    context = manifest.fold_contexts()[0]
    rng = make_rng(args.seed)
    train = subsample_train(manifest, context, args.n, rng)
    ckpt = read_checkpoint(args.checkpoint)
    preset = get_preset(ckpt.preset)
    clips = load_clips(manifest, train, preset)
    eval_clips = load_clips(manifest, context.eval, preset)
    opt = OptimizerConfig(slow_lr=args.slow_lr)

    if args.command == "finetune-proto":
        model = fine_tune_proto(
            ckpt,
            clips,
            manifest.n_classes,
            opt=opt,
            config=ProtoConfig(distance=args.distance, patience=args.patience),
            rng=rng,
            eval_clips=eval_clips if args.trace else None,
            trace_path=args.trace,
        )
    else:
        model = fine_tune_softmax(ckpt, clips, manifest.n_classes, opt, epochs=args.epochs, rng=rng)

    accuracy = model.evaluate(eval_clips)
    logger.info(f"{args.command} with n={args.n} on fold '{context.name}': {accuracy=:.4f} after {model.epochs_trained} epochs")
    if args.out:
        save_checkpoint(model.graph, args.out, preset=preset.id, note=f"{args.command} n={args.n} seed={args.seed}")
    print(f"accuracy={accuracy:.4f}")


COMMANDS = {
    "synth": synth,
    "run": run,
    "aggregate": aggregate,
    "pretrain": pretrain,
    "finetune": finetune,
    "finetune-proto": finetune,
    "baseline": baseline,
}


def configure_logging(log_dir: str, level: str, command: str) -> str:
    """Log to the console and to a per-command file.

    Args:
        log_dir: The directory of the log files.
        level: A logging level name like 'INFO'.
        command: The sub-command, which prefixes the file name.

    Returns:
        The path of the log file.
    """
    os.makedirs(log_dir, exist_ok=True)
    path = os.path.join(log_dir, f"{command}-{timestamp()}.log")
    logging.basicConfig(
        format="%(asctime)s | %(levelname)s | %(name)s | %(message)s",
        level=getattr(logging, level),
        handlers=[logging.FileHandler(path, encoding="utf-8"), logging.StreamHandler()],
        force=True,
    )
    return path


def load_environment(env_file: str | None) -> None:
    """Load LOWDATA_* settings from a dotenv file without overriding set variables."""
    if env_file is None:
        return
    if load_dotenv(env_file, override=False):
        logger.info(f"Loaded environment variables from '{env_file}'")
    else:
        logger.warning(f"No variables found in '{env_file}'")


def main(argv: Sequence[str] | None = None) -> None:
    """Run one lowdata sub-command.

    Exits with status 1 on library and file errors.
    """
    args = argument_parser().parse_args(argv)
    log_file = configure_logging(args.log_dir, args.log_level, args.command)
    load_environment(args.env_file)
    logger.info(f"Running '{args.command}' with logs in '{log_file}' and options:\n{pprint_dict(vars(args))}")

    try:
        COMMANDS[args.command](args)
    except (LowDataError, OSError) as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
