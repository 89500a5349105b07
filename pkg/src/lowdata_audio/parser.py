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

import os
import argparse


PLANS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs", "plans")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def local_path(path: str) -> str | None:
    """Typing for provided path arguments.

    Args:
        path: A local path of a file or directory.

    Returns:
        The path if it exists.

    Raises:
        ArgumentTypeError: The provided path doesn't exist.
    """
    if os.path.exists(path):
        return path
    else:
        raise argparse.ArgumentTypeError(f"The provided '{path=}' doesn't exist!")


def plan_path(name_or_path: str) -> str:
    """Typing for plan arguments: a shipped plan name like 'desk' or a JSON file."""
    shipped = os.path.join(PLANS_DIR, f"{name_or_path}.json")
    if os.path.exists(shipped):
        return shipped
    return local_path(name_or_path)


def _add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--seed",
        default=0,
        type=int,
        help="The seed of all randomness.",
    )


def _add_out(parser: argparse.ArgumentParser, help: str) -> None:
    parser.add_argument(
        "--out",
        default=None,
        type=str,
        help=help,
    )


def _add_workers(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--workers",
        default=None,
        type=int,
        help="The worker processes, by default LOWDATA_WORKERS or 1.",
    )


def argument_parser() -> argparse.ArgumentParser:
    """Return an argument parser.

    Returns:
        An argument parser with one sub-command per workflow.
    """
    parser = argparse.ArgumentParser(
        prog="lowdata",
        description="Train and evaluate audio classifiers with few training clips per class.",
    )
    parser.add_argument(
        "--log_dir",
        default=".logs",
        type=str,
        help="The directory of the per-command log files.",
    )
    parser.add_argument(
        "--log_level",
        default="INFO",
        choices=LOG_LEVELS,
        help="The level of console and file logs; DEBUG adds per-epoch details.",
    )
    parser.add_argument(
        "--env_file",
        default=None,
        type=local_path,
        help="A dotenv file of LOWDATA_* settings, for example LOWDATA_WORKERS.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="Write a synthetic dataset and its manifest.")
    synth.add_argument("--classes", default=10, type=int, help="The number of classes.")
    synth.add_argument("--clips_per_class", default=30, type=int, help="The number of clips per class.")
    synth.add_argument(
        "--layout",
        default="folded",
        choices=["folded", "split"],
        help="Three folds or a fixed train/eval split.",
    )
    _add_seed(synth)
    _add_out(synth, "The output directory.")

    run = commands.add_parser("run", help="Run an experiment plan and write raw and curve CSVs.")
    run.add_argument(
        "--config",
        default="full",
        type=plan_path,
        help="A shipped plan ('full', 'desk') or the path to a plan JSON file.",
    )
    run.add_argument("--strategy", required=True, type=str, help="The system to train and evaluate.")
    run.add_argument("--n", nargs="+", default=[1, 2, 5, 10, 20, 50, 100], type=int, help="The clips per class.")
    run.add_argument("--m", default=None, type=int, help="The runs per fold, by default the standard schedule.")
    run.add_argument("--distance", default=None, choices=["euclidean", "cosine"], help="The prototype distance.")
    run.add_argument("--compression", default=None, choices=["log-eps", "log-learn"], help="The mel compression.")
    run.add_argument("--manifest", required=True, type=local_path, help="The dataset manifest CSV.")
    run.add_argument("--checkpoint", default=None, type=local_path, help="The pre-trained backbone checkpoint.")
    run.add_argument(
        "--no_timing",
        action="store_true",
        default=False,
        help="Write zero wall times so repeated runs give identical files.",
    )
    run.add_argument(
        "--reference",
        default=None,
        choices=["us8k", "asc-tut"],
        help="Add published accuracies to the curve CSV.",
    )
    _add_seed(run)
    _add_workers(run)
    _add_out(run, "The output directory, by default a new directory under 'runs'.")

    aggregate = commands.add_parser("aggregate", help="Aggregate a raw results CSV into an accuracy curve.")
    aggregate.add_argument("--results", required=True, type=local_path, help="The raw results CSV.")
    aggregate.add_argument(
        "--reference",
        default=None,
        choices=["us8k", "asc-tut"],
        help="Add published accuracies to the curve CSV.",
    )
    aggregate.add_argument(
        "--gains",
        default=None,
        type=str,
        help="Also write the log-learn minus log-eps accuracy gains to this CSV.",
    )
    _add_out(aggregate, "The curve CSV, by default next to the raw results.")

    pretrain = commands.add_parser("pretrain", help="Pre-train the vggish-like backbone on a source dataset.")
    pretrain.add_argument("--manifest", required=True, type=local_path, help="The source dataset manifest CSV.")
    pretrain.add_argument("--epochs", default=20, type=int, help="The training epochs.")
    pretrain.add_argument(
        "--channels",
        nargs=6,
        default=[64, 128, 256, 256, 512, 512],
        type=int,
        help="The six conv widths.",
    )
    pretrain.add_argument(
        "--dense_units",
        nargs=3,
        default=[4096, 4096, 128],
        type=int,
        help="The three dense widths.",
    )
    pretrain.add_argument("--batch_size", default=256, type=int, help="The batch size.")
    _add_seed(pretrain)
    _add_out(pretrain, "The checkpoint file.")

    for name, help in (
        ("finetune", "Fine-tune a backbone with a softmax head."),
        ("finetune-proto", "Fine-tune a backbone with a prototypical head."),
    ):
        finetune = commands.add_parser(name, help=help)
        finetune.add_argument("--checkpoint", required=True, type=local_path, help="The backbone checkpoint.")
        finetune.add_argument("--manifest", required=True, type=local_path, help="The target dataset manifest CSV.")
        finetune.add_argument("--n", default=5, type=int, help="The training clips per class.")
        finetune.add_argument("--epochs", default=200, type=int, help="The epochs of softmax fine-tuning.")
        finetune.add_argument("--patience", default=200, type=int, help="The plateau patience of prototypical fine-tuning.")
        finetune.add_argument("--slow_lr", default=0.00001, type=float, help="The learning rate of pre-trained layers.")
        finetune.add_argument("--distance", default="euclidean", choices=["euclidean", "cosine"], help="The prototype distance.")
        finetune.add_argument("--trace", default=None, type=str, help="Write the accuracy trace CSV here.")
        _add_seed(finetune)
        _add_out(finetune, "Save the fine-tuned model to this checkpoint file.")

    baseline = commands.add_parser("baseline", help="Run a reference classifier.")
    baseline.add_argument(
        "--strategy",
        required=True,
        choices=["random", "nn_mfcc", "nn_features"],
        help="The reference classifier.",
    )
    baseline.add_argument("--manifest", required=True, type=local_path, help="The dataset manifest CSV.")
    baseline.add_argument("--n", nargs="+", default=[1, 2, 5, 10, 20, 50, 100], type=int, help="The clips per class.")
    baseline.add_argument("--m", default=None, type=int, help="The runs per fold, by default the standard schedule.")
    baseline.add_argument("--checkpoint", default=None, type=local_path, help="The backbone of 'nn_features'.")
    _add_seed(baseline)
    _add_workers(baseline)
    _add_out(baseline, "The output directory, by default a new directory under 'runs'.")

    return parser
