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

"""Prototypical-network classification and episodic training."""

from typing import Sequence

import logging
import itertools
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import softmax

from lowdata_audio.errors import ArgumentError, DataError, DimensionError
from lowdata_audio.frontend import ClassifierFn, sample_patch, windowed_predict
from lowdata_audio.models import Clip, FrontendPreset, MelPatch
from lowdata_audio.ndgrad import ops
from lowdata_audio.ndgrad.optim import OptimizerConfig, sgd_step
from lowdata_audio.ndgrad.tensor import Tensor
from lowdata_audio.utils import make_rng
from lowdata_audio.zoo import ModelGraph, classifier_fn, evaluate, stack_patches


logger = logging.getLogger(__name__)


@dataclass
class ProtoConfig:
    """Settings of prototypical training.

    Attrs:
        support_size: The number of support patches per class.
        queries_per_class: The number of query patches per class and episode.
        distance: Either 'euclidean' or 'cosine'.
        squared: Whether the euclidean distance is squared.
        patience: The number of epochs without a strictly better train
            accuracy after which training stops.
        max_epochs: An optional hard limit on the number of epochs.
    """
    support_size: int = 5
    queries_per_class: int = 5
    distance: str = "euclidean"
    squared: bool = False
    patience: int = 200
    max_epochs: int | None = None

    def __post_init__(self) -> None:
        if self.support_size < 1 or self.queries_per_class < 1:
            raise ArgumentError(
                f"Support and query sizes have to be positive but are {self.support_size} and {self.queries_per_class}"
            )
        if self.distance not in ops.DISTANCES:
            raise ArgumentError(f"Unknown distance '{self.distance}', expected one of {ops.DISTANCES}")
        if self.patience < 1:
            raise ArgumentError(f"The patience has to be positive but is {self.patience}")
        if self.max_epochs is not None and self.max_epochs < 1:
            raise ArgumentError(f"The epoch limit has to be positive but is {self.max_epochs}")


@dataclass
class SupportSet:
    """The fixed support patches of every class.

    Attrs:
        patches: Per class the same number of patches.
    """
    patches: list[list[MelPatch]]

    def __post_init__(self) -> None:
        if len(self.patches) < 2:
            raise ArgumentError(f"A support set needs at least 2 classes but has {len(self.patches)}")
        sizes = {len(class_patches) for class_patches in self.patches}
        if 0 in sizes:
            empty = [k for k, class_patches in enumerate(self.patches) if not class_patches]
            raise ArgumentError(f"Classes {empty} have no support patches")
        if len(sizes) != 1:
            raise ArgumentError(f"Every class needs the same number of support patches but got sizes {sorted(sizes)}")

    @property
    def n_classes(self) -> int:
        return len(self.patches)

    @property
    def size(self) -> int:
        return len(self.patches[0])

    @property
    def source_clip_ids(self) -> set[str]:
        return {patch.clip_id for class_patches in self.patches for patch in class_patches}

    def flat(self) -> list[MelPatch]:
        return [patch for class_patches in self.patches for patch in class_patches]


@dataclass
class PrototypeSet:
    """Class prototypes in the embedding space.

    Attrs:
        mu: The (K, D) prototype tensor.
        distance: Either 'euclidean' or 'cosine'.
        squared: Whether the euclidean distance is squared.
    """
    mu: Tensor
    distance: str = "euclidean"
    squared: bool = False

    def __post_init__(self) -> None:
        if self.mu.ndim != 2 or self.mu.shape[0] < 2:
            raise ArgumentError(f"Expected prototypes of shape (K >= 2, D) but got {self.mu.shape}")
        if self.distance not in ops.DISTANCES:
            raise ArgumentError(f"Unknown distance '{self.distance}', expected one of {ops.DISTANCES}")

    @property
    def n_classes(self) -> int:
        return self.mu.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.mu.shape[1]


@dataclass
class EpochRecord:
    epoch: int
    train_acc: float
    test_acc: float | None = None
    loss: float | None = None


@dataclass(eq=False)
class TrainedModel:
    """A trained classifier with its training provenance.

    Attrs:
        graph: The trained graph.
        preset: The frontend preset of its inputs.
        prototypes: The class prototypes of embedding graphs.
        epochs_trained: The number of completed epochs.
        trace: The per-epoch accuracies of prototypical training.
        seen_clip_ids: Every clip ID that training consumed.
    """
    graph: ModelGraph
    preset: FrontendPreset
    prototypes: PrototypeSet | None = None
    epochs_trained: int = 0
    trace: list[EpochRecord] = field(default_factory=list)
    seen_clip_ids: set[str] = field(default_factory=set)

    def posterior_fn(self) -> ClassifierFn:
        if self.prototypes is not None:
            return proto_classifier_fn(self.graph, self.prototypes)
        return classifier_fn(self.graph)

    def predict(self, mel: np.ndarray) -> np.ndarray:
        return windowed_predict(mel, self.posterior_fn(), self.preset.n_frames, self.preset.hop_frames)

    def evaluate(self, clips: Sequence[Clip]) -> float:
        return evaluate(self.posterior_fn(), clips, self.preset)


def _check_embedding(embed: ModelGraph) -> None:
    if embed.output_kind != "linear_embedding":
        raise ArgumentError(f"Prototypes need an embedding graph but {embed.arch} has {embed.output_kind} outputs")


def group_by_label(clips: Sequence[Clip]) -> dict[int, list[Clip]]:
    groups = defaultdict(list)
    for clip in clips:
        groups[clip.label].append(clip)
    return dict(groups)


def _draw_patches(
    by_class: dict[int, list[Clip]],
    n_classes: int,
    per_class: int,
    n_frames: int,
    rng: np.random.Generator
) -> list[list[MelPatch]]:
    patches = []
    for k in range(n_classes):
        if not by_class.get(k):
            raise DataError(f"Class {k} has no training clips")
        class_clips = by_class[k]
        class_patches = []
        for _ in range(per_class):
            clip = class_clips[int(rng.integers(len(class_clips)))]
            class_patches.append(sample_patch(clip.mel, n_frames, rng, label=k, clip_id=clip.clip_id))
        patches.append(class_patches)
    return patches


def sample_support(
    clips: Sequence[Clip],
    n_classes: int,
    support_size: int,
    n_frames: int,
    rng: np.random.Generator | int | None = None
) -> SupportSet:
    """Draw the support set once at the start of a run.

    Each patch comes from a training clip of its class picked uniformly at
    random, so a single clip per class provides all of its patches.

    Raises:
        DataError: A class has no training clips.
    """
    rng = make_rng(rng)
    return SupportSet(_draw_patches(group_by_label(clips), n_classes, support_size, n_frames, rng))


def compute_prototypes(
    support: SupportSet,
    embed: ModelGraph,
    distance: str = "euclidean",
    squared: bool = False,
    mode: str = "eval",
    rng: np.random.Generator | None = None
) -> PrototypeSet:
    """Average the support embeddings of every class.

    Gradients flow through the support embeddings into the graph.
    """
    _check_embedding(embed)
    embedded = embed.forward(stack_patches(support.flat()), mode=mode, rng=rng)
    return PrototypeSet(_class_means(embedded, support), distance=distance, squared=squared)


def _class_means(embedded: Tensor, support: SupportSet) -> Tensor:
    grouped = ops.reshape(embedded, (support.n_classes, support.size, embedded.shape[1]))
    return ops.mean(grouped, axis=1)


def distance(a: np.ndarray, b: np.ndarray, kind: str = "euclidean", squared: bool = False) -> float:
    """Return the distance of two vectors.

    Raises:
        ArgumentError: The vectors differ in size.
    """
    a, b = np.asarray(a, dtype=np.float64).reshape(-1), np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ArgumentError(f"Can't compare vectors of shapes {a.shape} and {b.shape}")
    return ops.pairwise_distance(a[None], b[None], kind=kind, squared=squared).item()


def posterior(distances: np.ndarray) -> np.ndarray:
    """Softmax over negative distances along the last axis."""
    return softmax(-np.asarray(distances, dtype=np.float64), axis=-1)


def classify_query(x: MelPatch | np.ndarray, protos: PrototypeSet, embed: ModelGraph) -> np.ndarray:
    """Return the class posterior of one patch in eval mode.

    Raises:
        DimensionError: The embedding size differs from the prototypes.
    """
    _check_embedding(embed)
    if embed.n_outputs != protos.embed_dim:
        raise DimensionError(f"Embeddings of size {embed.n_outputs} don't match prototypes of size {protos.embed_dim}")
    values = x.values if isinstance(x, MelPatch) else np.asarray(x)
    embedded = embed.forward(values[None], mode="eval")
    d = ops.pairwise_distance(embedded, protos.mu.detach(), kind=protos.distance, squared=protos.squared)
    return posterior(d.data[0])


def proto_classifier_fn(embed: ModelGraph, protos: PrototypeSet) -> ClassifierFn:
    return lambda window: classify_query(window, protos, embed)


def episode_loss(
    embed: ModelGraph,
    support: SupportSet,
    queries: Sequence[MelPatch],
    config: ProtoConfig,
    mode: str = "train",
    rng: np.random.Generator | None = None
) -> tuple[Tensor, np.ndarray]:
    """The mean negative log-posterior of the true class of every query.

    Support and queries are embedded in one batch; the prototypes are
    recomputed from the support with the current parameters.

    Returns:
        The scalar loss tensor and the (Q, K) query posteriors.
    """
    _check_embedding(embed)
    flat_support = support.flat()
    batch = stack_patches(list(flat_support) + list(queries))
    embedded = embed.forward(batch, mode=mode, rng=rng)
    n_support = len(flat_support)
    mu = _class_means(ops.take_rows(embedded, slice(0, n_support)), support)
    query_embedded = ops.take_rows(embedded, slice(n_support, None))
    d = ops.pairwise_distance(query_embedded, mu, kind=config.distance, squared=config.squared)
    return ops.softmax_xent(ops.neg(d), [patch.label for patch in queries])


def proto_train_step(
    embed: ModelGraph,
    support: SupportSet,
    queries: Sequence[MelPatch],
    opt: OptimizerConfig,
    config: ProtoConfig | None = None,
    rng: np.random.Generator | None = None
) -> tuple[float, int]:
    """Take one SGD step on an episode.

    Args:
        embed: The embedding graph.
        support: The fixed support set.
        queries: Exactly `queries_per_class` patches of every class.
        opt: The optimizer settings.
        config: The prototypical settings.
        rng: The generator of dropout masks.

    Returns:
        The episode loss and the number of correctly classified queries.

    Raises:
        ArgumentError: A class has the wrong number of queries.
    """
    config = config or ProtoConfig()
    counts = np.bincount([patch.label for patch in queries], minlength=support.n_classes)
    if counts.shape[0] != support.n_classes or np.any(counts != config.queries_per_class):
        raise ArgumentError(
            f"Expected {config.queries_per_class} queries for each of {support.n_classes} classes but got {counts.tolist()}"
        )
    embed.zero_grad()
    loss, probs = episode_loss(embed, support, queries, config, mode="train", rng=rng)
    loss.backward()
    sgd_step(embed.parameters(), opt)
    embed.zero_grad()
    correct = int(np.sum(probs.argmax(axis=1) == np.array([patch.label for patch in queries])))
    return loss.item(), correct


@dataclass
class PlateauStopper:
    """Stops once the accuracy hasn't strictly improved for `patience` epochs.

    Attrs:
        patience: The number of epochs without improvement to wait.
        best: The best accuracy so far.
        best_epoch: The 1-indexed epoch of the best accuracy.
        epoch: The number of recorded epochs.
    """
    patience: int = 200
    best: float = float("-inf")
    best_epoch: int = 0
    epoch: int = 0

    def __post_init__(self) -> None:
        if self.patience < 1:
            raise ArgumentError(f"The patience has to be positive but is {self.patience}")

    def update(self, accuracy: float) -> bool:
        """Record the accuracy of the next epoch and return whether to stop."""
        self.epoch += 1
        if accuracy > self.best:
            self.best = accuracy
            self.best_epoch = self.epoch
        return self.epoch - self.best_epoch >= self.patience


def train_until_plateau(
    embed: ModelGraph,
    train_clips: Sequence[Clip],
    support: SupportSet,
    preset: FrontendPreset,
    opt: OptimizerConfig | None = None,
    config: ProtoConfig | None = None,
    rng: np.random.Generator | int | None = None,
    eval_clips: Sequence[Clip] | None = None,
    trace_path: str | None = None
) -> TrainedModel:
    """Train an embedding graph episodically until the train accuracy plateaus.

    Every epoch takes one step on a fresh query batch and then measures the
    accuracy of windowed predictions on the whole training set. No
    validation data takes part in the stop decision.

    Args:
        embed: The embedding graph.
        train_clips: The training clips.
        support: The fixed support set drawn from `train_clips`.
        preset: The frontend preset of the clips.
        opt: The optimizer settings.
        config: The prototypical settings.
        rng: The seed or generator of query sampling and dropout.
        eval_clips: Held-out clips whose accuracy is only traced.
        trace_path: Where to write the accuracy trace CSV.

    Returns:
        The trained model with its prototypes and trace.
    """
    opt = opt or OptimizerConfig()
    config = config or ProtoConfig()
    rng = make_rng(rng)
    stopper = PlateauStopper(config.patience)
    by_class = group_by_label(train_clips)
    trace = []

    for epoch in itertools.count(1):
        queries = _draw_patches(by_class, support.n_classes, config.queries_per_class, preset.n_frames, rng)
        loss, correct = proto_train_step(embed, support, [q for row in queries for q in row], opt, config, rng)
        protos = compute_prototypes(support, embed, config.distance, config.squared)
        fn = proto_classifier_fn(embed, protos)
        train_acc = evaluate(fn, train_clips, preset)
        test_acc = evaluate(fn, eval_clips, preset) if eval_clips else None
        trace.append(EpochRecord(epoch=epoch, train_acc=train_acc, test_acc=test_acc, loss=loss))
        logger.debug(f"Epoch {epoch}: {loss=:.6f}, {correct=}, {train_acc=:.4f}, {test_acc=}")
        if stopper.update(train_acc):
            logger.info(f"Train accuracy plateaued at {stopper.best:.4f} (epoch {stopper.best_epoch}), stopping at epoch {epoch}")
            break
        if config.max_epochs is not None and epoch >= config.max_epochs:
            logger.info(f"Reached the limit of {config.max_epochs} epochs at train accuracy {train_acc:.4f}")
            break

    if trace_path:
        emit_trace(trace, trace_path)
    return TrainedModel(
        graph=embed,
        preset=preset,
        prototypes=compute_prototypes(support, embed, config.distance, config.squared),
        epochs_trained=len(trace),
        trace=trace,
        seen_clip_ids={clip.clip_id for clip in train_clips} | support.source_clip_ids,
    )


def emit_trace(trace: Sequence[EpochRecord], path: str) -> pd.DataFrame:
    """Write an accuracy trace as CSV with the columns epoch, train_acc and test_acc."""
    frame = pd.DataFrame(
        {
            "epoch": [record.epoch for record in trace],
            "train_acc": [record.train_acc for record in trace],
            "test_acc": [record.test_acc for record in trace],
        }
    )
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote an accuracy trace of {len(frame)} epochs to '{path}'")
    return frame
