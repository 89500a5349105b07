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

"""Random guessing and nearest-neighbor reference classifiers."""

from typing import Sequence

import logging
from dataclasses import dataclass

import numpy as np

from lowdata_audio.errors import ArgumentError, DimensionError, StateError
from lowdata_audio.frontend import DELTA_WIDTH, mfcc_vector, window_starts
from lowdata_audio.models import Clip, FrontendPreset, StftConfig
from lowdata_audio.ndgrad import ops
from lowdata_audio.zoo import ModelGraph


logger = logging.getLogger(__name__)


METRICS = ("cosine",)


@dataclass
class FeatureIndex:
    """Labelled reference vectors for nearest-neighbor search.

    Attrs:
        vectors: The (M, D) reference vectors.
        labels: The M class indices.
        metric: The distance of the search.
        clip_ids: The source clip of every vector, empty strings if unknown.
    """
    vectors: np.ndarray
    labels: np.ndarray
    metric: str = "cosine"
    clip_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2:
            raise DimensionError(f"Expected (M, D) vectors but got shape {self.vectors.shape}")
        if self.labels.shape != (self.vectors.shape[0],):
            raise DimensionError(f"{self.vectors.shape[0]} vectors don't match {self.labels.shape[0]} labels")
        if self.metric not in METRICS:
            raise ArgumentError(f"Unknown metric '{self.metric}', expected one of {METRICS}")
        if self.clip_ids is None:
            self.clip_ids = np.full(self.vectors.shape[0], "", dtype=object)
        self.clip_ids = np.asarray(self.clip_ids, dtype=object)
        if self.clip_ids.shape != (self.vectors.shape[0],):
            raise DimensionError(f"{self.vectors.shape[0]} vectors don't match {self.clip_ids.shape[0]} clip IDs")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def source_clip_ids(self) -> set[str]:
        return {clip_id for clip_id in self.clip_ids if clip_id}


def random_guess(n_classes: int, rng: np.random.Generator) -> int:
    """Pick a class uniformly at random."""
    if n_classes < 2:
        raise ArgumentError(f"Guessing needs at least 2 classes but got {n_classes}")
    return int(rng.integers(n_classes))


def nn_classify(query: np.ndarray, index: FeatureIndex) -> int:
    """Return the label of the closest reference vector.

    Distance ties resolve to the lowest vector index.

    Raises:
        StateError: The index is empty.
        DimensionError: The query size differs from the index.
    """
    if len(index) == 0:
        raise StateError("Can't search an empty feature index")
    query = np.asarray(query, dtype=np.float64).reshape(1, -1)
    if query.shape[1] != index.vectors.shape[1]:
        raise DimensionError(f"Query of size {query.shape[1]} doesn't match index vectors of size {index.vectors.shape[1]}")
    distances = ops.pairwise_distance(query, index.vectors, kind=index.metric).data[0]
    return int(index.labels[np.argmin(distances)])


def nn_classify_voted(clip_features: Sequence[np.ndarray], index: FeatureIndex) -> int:
    """Classify every window and return the plurality vote.

    Vote ties resolve to the lowest class index.
    """
    if len(clip_features) == 0:
        raise ArgumentError("Voting needs at least one window feature")
    votes = [nn_classify(feature, index) for feature in clip_features]
    return int(np.argmax(np.bincount(votes)))


def clip_mfcc(wave: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """MFCC statistics of a whole clip, tiling clips too short for the delta window."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.shape[0] == 0:
        raise ArgumentError("Can't summarize an empty waveform")
    min_samples = cfg.window_size + (DELTA_WIDTH - 1) * cfg.hop_size
    if wave.shape[0] < min_samples:
        wave = np.resize(wave, min_samples)
    return mfcc_vector(wave, cfg)


def build_mfcc_index(
    waves: Sequence[np.ndarray],
    labels: Sequence[int],
    cfg: StftConfig,
    clip_ids: Sequence[str] | None = None
) -> FeatureIndex:
    """Index one MFCC vector per training clip."""
    vectors = np.stack([clip_mfcc(wave, cfg) for wave in waves]) if waves else np.zeros((0, 120))
    return FeatureIndex(vectors=vectors, labels=np.asarray(labels), clip_ids=clip_ids)


def window_features(graph: ModelGraph, mel: np.ndarray, preset: FrontendPreset) -> np.ndarray:
    """Backbone features of every prediction window of a spectrogram.

    Returns:
        A (windows, features) array in eval mode.
    """
    if graph.output_kind != "features":
        raise ArgumentError(f"Window features need a headless backbone but got {graph.output_kind} outputs")
    starts = window_starts(mel.shape[1], preset.n_frames, preset.hop_frames)
    windows = np.stack([mel[:, start:start + preset.n_frames] for start in starts])
    return graph.forward(windows, mode="eval").data


def build_feature_index(graph: ModelGraph, clips: Sequence[Clip], preset: FrontendPreset) -> FeatureIndex:
    """Index the window features of every training clip under the clip label."""
    if not clips:
        raise ArgumentError("Can't index an empty list of clips")
    vectors, labels, clip_ids = [], [], []
    for clip in clips:
        features = window_features(graph, clip.mel, preset)
        vectors.append(features)
        labels += [clip.label] * features.shape[0]
        clip_ids += [clip.clip_id] * features.shape[0]
    index = FeatureIndex(vectors=np.concatenate(vectors), labels=np.asarray(labels), clip_ids=clip_ids)
    logger.debug(f"Indexed {len(index)} window features of {len(clips)} clips")
    return index
