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

"""The n-clips-per-class experiment protocol.

Every (fold, run) cell subsamples n training clips per class, trains one
model with its strategy and evaluates it on the held-out clips. There is
no validation split.
"""

from typing import Any, Callable

import os
import time
import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np
from tqdm import tqdm

from lowdata_audio.baselines import (
    build_feature_index,
    build_mfcc_index,
    clip_mfcc,
    nn_classify,
    nn_classify_voted,
    random_guess,
    window_features
)
from lowdata_audio.errors import ArgumentError, DataError
from lowdata_audio.frontend import LogCompression, get_preset
from lowdata_audio.labctl.dataset import (
    DatasetManifest,
    FoldContext,
    ManifestEntry,
    cached_wave,
    load_clips
)
from lowdata_audio.labctl.results import ResultsTable
from lowdata_audio.models import FrontendPreset
from lowdata_audio.ndgrad.optim import OptimizerConfig
from lowdata_audio.protohead import ProtoConfig, sample_support, train_until_plateau
from lowdata_audio.transfer import fine_tune_proto, fine_tune_softmax, load_checkpoint, read_checkpoint
from lowdata_audio.utils import derive_seed, load_json, make_rng
from lowdata_audio.zoo import build_proto_vgg, build_sbcnn, build_timbre, build_vgg, classifier_fn, evaluate, train_classifier


logger = logging.getLogger(__name__)


STRATEGIES = (
    "sbcnn",
    "vgg",
    "timbre",
    "protonet",
    "transfer_softmax",
    "transfer_proto",
    "nn_mfcc",
    "nn_features",
    "random",
)
N_VALUES = (1, 2, 5, 10, 20, 50, 100)
COMPRESSION_NAMES = ("log-eps", "log-learn")
CHECKPOINT_STRATEGIES = ("transfer_softmax", "transfer_proto", "nn_features")
WORKERS_ENV = "LOWDATA_WORKERS"


def default_m(n: int) -> int:
    """Return the number of runs per fold for n clips per class."""
    if n <= 2:
        return 20
    if n <= 10:
        return 10
    return 5


@dataclass
class ExperimentPlan:
    """One strategy at one training set size.

    Attrs:
        strategy: The system to train and evaluate.
        n: The number of training clips per class.
        m: The number of runs per fold, by default following `default_m`.
        distance: The distance of prototypical strategies.
        compression: 'log-eps' or 'log-learn' for models trained from scratch.
        seed: The seed of the whole experiment.
        preset: The frontend preset ID; transfer strategies default to
            'mel64' and all others to 'mel128'.
        checkpoint: The pre-trained backbone of the transfer strategies.
        epochs: The fixed epochs of softmax-trained models.
        patience: The plateau patience of prototypical models.
        max_epochs: An optional epoch limit of prototypical models.
        filters_per_layer: The VGG width.
        proto_filters: The width of the prototypical VGG.
        embed_dim: The embedding size of prototypical models.
        support_size: The support patches per class.
        queries_per_class: The query patches per class and episode.
        squared: Whether euclidean distances are squared.
        base_lr: The learning rate of new parameters.
        slow_lr: The learning rate of pre-trained parameters.
        clip_norm: The gradient clipping threshold.
        batch_size: The batch size of softmax training.
        record_timing: Whether to record wall-clock times.
    """
    strategy: str
    n: int
    m: int | None = None
    distance: str = "euclidean"
    compression: str = "log-eps"
    seed: int = 0
    preset: str | None = None
    checkpoint: str | None = None
    epochs: int = 200
    patience: int = 200
    max_epochs: int | None = None
    filters_per_layer: int = 32
    proto_filters: int = 128
    embed_dim: int = 10
    support_size: int = 5
    queries_per_class: int = 5
    squared: bool = False
    base_lr: float = 0.1
    slow_lr: float = 0.00001
    clip_norm: float = 5.0
    batch_size: int = 256
    record_timing: bool = True

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ArgumentError(f"Unknown strategy '{self.strategy}', expected one of {STRATEGIES}")
        if self.n < 1:
            raise ArgumentError(f"n has to be positive but is {self.n}")
        if self.n not in N_VALUES:
            logger.warning(f"n={self.n} is outside of the standard grid {N_VALUES}")
        if self.m is None:
            self.m = default_m(self.n)
        if self.m < 1:
            raise ArgumentError(f"m has to be positive but is {self.m}")
        if self.compression not in COMPRESSION_NAMES:
            raise ArgumentError(f"Unknown compression '{self.compression}', expected one of {COMPRESSION_NAMES}")
        if self.preset is None:
            self.preset = "mel64" if self.strategy in CHECKPOINT_STRATEGIES else "mel128"
        get_preset(self.preset)
        if self.strategy in CHECKPOINT_STRATEGIES and not self.checkpoint:
            raise ArgumentError(f"Strategy '{self.strategy}' needs a checkpoint")
        # Validates the nested settings early
        self.optimizer_config()
        self.proto_config()

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            base_lr=self.base_lr,
            slow_lr=self.slow_lr,
            clip_norm=self.clip_norm,
            batch_size=self.batch_size,
        )

    def proto_config(self) -> ProtoConfig:
        return ProtoConfig(
            support_size=self.support_size,
            queries_per_class=self.queries_per_class,
            distance=self.distance,
            squared=self.squared,
            patience=self.patience,
            max_epochs=self.max_epochs,
        )


def load_plan(path: str, **overrides) -> ExperimentPlan:
    """Load a plan from JSON; overrides that are not `None` win.

    Raises:
        ArgumentError: The file holds unknown settings.
    """
    data = load_json(path)
    data.update({key: value for key, value in overrides.items() if value is not None})
    known = {f.name for f in fields(ExperimentPlan)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ArgumentError(f"Plan '{path}' has unknown settings {unknown}")
    return ExperimentPlan(**data)


def subsample_train(
    manifest: DatasetManifest,
    context: FoldContext,
    n: int,
    rng: np.random.Generator
) -> list[ManifestEntry]:
    """Draw n training clips of every class without replacement.

    Raises:
        DataError: A class has fewer than n training clips.
    """
    by_label = defaultdict(list)
    for entry in context.train:
        by_label[entry.label].append(entry)
    chosen = []
    for label in manifest.class_names:
        candidates = by_label[label]
        if len(candidates) < n:
            raise DataError(f"Class '{label}' has {len(candidates)} training clips in fold '{context.name}' but n={n}")
        picks = rng.choice(len(candidates), size=n, replace=False)
        chosen += [candidates[i] for i in sorted(picks)]
    return chosen


@dataclass
class CellOutcome:
    accuracy: float
    epochs_trained: int
    seen_clip_ids: set[str]


@dataclass
class Cell:
    """The inputs of one (fold, run) cell."""
    plan: ExperimentPlan
    manifest: DatasetManifest
    context: FoldContext
    train: list[ManifestEntry]
    preset: FrontendPreset
    rng: np.random.Generator

    def train_clips(self):
        return load_clips(self.manifest, self.train, self.preset)

    def eval_clips(self):
        return load_clips(self.manifest, self.context.eval, self.preset)

    def compression(self) -> LogCompression:
        return LogCompression.from_name(self.plan.compression)


def run_random(cell: Cell) -> CellOutcome:
    labels = [cell.manifest.label_index(entry.label) for entry in cell.context.eval]
    guesses = [random_guess(cell.manifest.n_classes, cell.rng) for _ in labels]
    return CellOutcome(float(np.mean(np.equal(guesses, labels))), 0, set())


def run_nn_mfcc(cell: Cell) -> CellOutcome:
    cfg = cell.preset.stft
    index = build_mfcc_index(
        [cached_wave(entry.path, cfg.sample_rate) for entry in cell.train],
        [cell.manifest.label_index(entry.label) for entry in cell.train],
        cfg,
        clip_ids=[entry.clip_id for entry in cell.train],
    )
    correct = [
        nn_classify(clip_mfcc(cached_wave(entry.path, cfg.sample_rate), cfg), index) == cell.manifest.label_index(entry.label)
        for entry in cell.context.eval
    ]
    return CellOutcome(float(np.mean(correct)), 0, index.source_clip_ids)


def run_nn_features(cell: Cell) -> CellOutcome:
    backbone = load_checkpoint(cell.plan.checkpoint, expected_arch="vggish_like")
    index = build_feature_index(backbone, cell.train_clips(), cell.preset)
    correct = [
        nn_classify_voted(list(window_features(backbone, clip.mel, cell.preset)), index) == clip.label
        for clip in cell.eval_clips()
    ]
    return CellOutcome(float(np.mean(correct)), 0, index.source_clip_ids)


def _run_softmax(cell: Cell, builder: Callable[..., Any], **kwargs) -> CellOutcome:
    graph = builder(cell.manifest.n_classes, compression=cell.compression(), rng=cell.rng, **kwargs)
    trace = train_classifier(graph, cell.train_clips(), cell.plan.optimizer_config(), epochs=cell.plan.epochs, rng=cell.rng)
    accuracy = evaluate(classifier_fn(graph), cell.eval_clips(), cell.preset)
    return CellOutcome(accuracy, cell.plan.epochs, trace.seen_clip_ids)


def run_sbcnn(cell: Cell) -> CellOutcome:
    return _run_softmax(cell, build_sbcnn)


def run_vgg(cell: Cell) -> CellOutcome:
    return _run_softmax(cell, build_vgg, filters_per_layer=cell.plan.filters_per_layer)


def run_timbre(cell: Cell) -> CellOutcome:
    return _run_softmax(cell, build_timbre)


def run_protonet(cell: Cell) -> CellOutcome:
    config = cell.plan.proto_config()
    embed = build_proto_vgg(
        embed_dim=cell.plan.embed_dim,
        filters_per_layer=cell.plan.proto_filters,
        compression=cell.compression(),
        rng=cell.rng,
    )
    clips = cell.train_clips()
    support = sample_support(clips, cell.manifest.n_classes, config.support_size, cell.preset.n_frames, cell.rng)
    model = train_until_plateau(embed, clips, support, cell.preset, cell.plan.optimizer_config(), config, cell.rng)
    return CellOutcome(model.evaluate(cell.eval_clips()), model.epochs_trained, model.seen_clip_ids)


def run_transfer_softmax(cell: Cell) -> CellOutcome:
    model = fine_tune_softmax(
        read_checkpoint(cell.plan.checkpoint),
        cell.train_clips(),
        cell.manifest.n_classes,
        cell.plan.optimizer_config(),
        epochs=cell.plan.epochs,
        rng=cell.rng,
    )
    return CellOutcome(model.evaluate(cell.eval_clips()), model.epochs_trained, model.seen_clip_ids)


def run_transfer_proto(cell: Cell) -> CellOutcome:
    model = fine_tune_proto(
        read_checkpoint(cell.plan.checkpoint),
        cell.train_clips(),
        cell.manifest.n_classes,
        embed_dim=cell.plan.embed_dim,
        opt=cell.plan.optimizer_config(),
        config=cell.plan.proto_config(),
        rng=cell.rng,
    )
    return CellOutcome(model.evaluate(cell.eval_clips()), model.epochs_trained, model.seen_clip_ids)


STRATEGY_RUNNERS: dict[str, Callable[[Cell], CellOutcome]] = {
    "sbcnn": run_sbcnn,
    "vgg": run_vgg,
    "timbre": run_timbre,
    "protonet": run_protonet,
    "transfer_softmax": run_transfer_softmax,
    "transfer_proto": run_transfer_proto,
    "nn_mfcc": run_nn_mfcc,
    "nn_features": run_nn_features,
    "random": run_random,
}


def run_cell(plan: ExperimentPlan, manifest: DatasetManifest, context: FoldContext, fold_index: int, run: int) -> dict[str, Any]:
    """Train and evaluate one (fold, run) cell and return its result row.

    Failures become error rows with an empty accuracy.
    """
    seed = derive_seed(plan.seed, fold_index, run)
    row = {
        "strategy": plan.strategy,
        "n": plan.n,
        "fold": context.name,
        "run": run,
        "seed": seed,
        "accuracy": None,
        "epochs_trained": 0,
        "wall_seconds": 0.0,
        "compression": plan.compression,
        "distance": plan.distance,
        "error": "",
    }
    start = time.perf_counter()
    try:
        rng = make_rng(seed)
        cell = Cell(
            plan=plan,
            manifest=manifest,
            context=context,
            train=subsample_train(manifest, context, plan.n, rng),
            preset=get_preset(plan.preset),
            rng=rng,
        )
        outcome = STRATEGY_RUNNERS[plan.strategy](cell)
        leaked = sorted(outcome.seen_clip_ids & context.eval_ids)
        if leaked:
            raise DataError(f"Training consumed evaluation clips {leaked[:5]} of fold '{context.name}'")
        row.update(accuracy=outcome.accuracy, epochs_trained=outcome.epochs_trained)
    except Exception as e:
        logger.error(f"{plan.strategy} n={plan.n} fold={context.name} run={run} failed: {type(e).__name__}: {e}")
        row["error"] = f"{type(e).__name__}: {e}"
    if plan.record_timing:
        row["wall_seconds"] = time.perf_counter() - start
    return row


def _run_cell_args(args: tuple) -> dict[str, Any]:
    return run_cell(*args)


def workers_from_env() -> int:
    value = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(value)
    except ValueError as e:
        raise ArgumentError(f"{WORKERS_ENV} has to be an integer but is '{value}'") from e
    return max(1, workers)


def run_experiment(plan: ExperimentPlan, manifest: DatasetManifest, workers: int | None = None) -> ResultsTable:
    """Run m cells per fold context and collect one row per cell.

    Rows are ordered by (fold, run) independently of the number of
    worker processes.

    Args:
        plan: The experiment plan.
        manifest: The dataset.
        workers: The number of processes, by default read from the
            LOWDATA_WORKERS environment variable.

    Returns:
        The results table.
    """
    workers = workers or workers_from_env()
    cells = [
        (plan, manifest, context, fold_index, run)
        for fold_index, context in enumerate(manifest.fold_contexts(), start=1)
        for run in range(plan.m)
    ]
    logger.info(f"Running {len(cells)} cells of {plan.strategy} with n={plan.n} on {workers} worker(s)")
    description = f"{plan.strategy} n={plan.n}"
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            rows = list(tqdm(executor.map(_run_cell_args, cells), total=len(cells), desc=description))
    else:
        rows = [_run_cell_args(cell) for cell in tqdm(cells, desc=description)]

    results = ResultsTable.from_rows(rows)
    failed = len(results.errors)
    logger.info(f"Finished {len(results)} cells of {plan.strategy} with n={plan.n}, {failed} failed")
    return results
