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

import numpy as np
import pytest

from conftest import random_clips
from lowdata_audio.baselines import (
    FeatureIndex,
    build_feature_index,
    build_mfcc_index,
    clip_mfcc,
    nn_classify,
    nn_classify_voted,
    random_guess,
    window_features
)
from lowdata_audio.errors import ArgumentError, DimensionError, StateError
from lowdata_audio.frontend import MEL128, MEL64, load_wave
from lowdata_audio.labctl.synth import synth_dataset
from lowdata_audio.zoo import build_vggish_like


def test_random_guess_is_uniform(rng):
    guesses = np.array([random_guess(4, rng) for _ in range(20000)])
    assert np.all(np.abs(np.bincount(guesses, minlength=4) / guesses.size - 0.25) < 0.02)
    with pytest.raises(ArgumentError):
        random_guess(1, rng)


def test_nn_classify_examples():
    index = FeatureIndex(vectors=[[1.0, 0.0], [0.0, 1.0]], labels=[0, 1])
    assert nn_classify([2.0, 0.1], index) == 0
    assert nn_classify([0.1, 3.0], index) == 1
    with pytest.raises(DimensionError):
        nn_classify([1.0, 0.0, 0.0], index)


def test_nn_classify_on_an_empty_index():
    with pytest.raises(StateError):
        nn_classify([1.0, 0.0], FeatureIndex(vectors=np.zeros((0, 2)), labels=[]))


def test_feature_index_validation():
    with pytest.raises(DimensionError):
        FeatureIndex(vectors=np.zeros((3, 2)), labels=[0, 1])
    with pytest.raises(ArgumentError):
        FeatureIndex(vectors=np.zeros((2, 2)), labels=[0, 1], metric="euclidean")
    with pytest.raises(DimensionError):
        FeatureIndex(vectors=np.zeros((2, 2)), labels=[0, 1], clip_ids=["a"])
    assert FeatureIndex(vectors=np.zeros((2, 2)), labels=[0, 1]).source_clip_ids == set()


def test_nn_classify_ignores_scale_and_index_order(rng):
    vectors = rng.standard_normal((20, 6))
    labels = rng.integers(0, 4, 20)
    index = FeatureIndex(vectors=vectors, labels=labels)
    order = rng.permutation(20)
    shuffled = FeatureIndex(vectors=vectors[order], labels=labels[order])
    for _ in range(50):
        query = rng.standard_normal(6)
        expected = nn_classify(query, index)
        assert nn_classify(query * 7.3, index) == expected
        assert nn_classify(query, shuffled) == expected


def test_vote_ties_go_to_the_lowest_class():
    index = FeatureIndex(vectors=[[1.0, 0.0], [0.0, 1.0]], labels=[0, 1])
    assert nn_classify_voted([[0.0, 1.0], [1.0, 0.0]], index) == 0
    assert nn_classify_voted([[0.0, 1.0], [0.0, 2.0], [1.0, 0.0]], index) == 1
    with pytest.raises(ArgumentError):
        nn_classify_voted([], index)


def test_mfcc_index_covers_short_clips(rng):
    waves = [rng.standard_normal(44100), rng.standard_normal(500), rng.standard_normal(20000)]
    index = build_mfcc_index(waves, [0, 1, 1], MEL128.stft, clip_ids=["a", "b", "c"])
    assert index.vectors.shape == (3, 120)
    assert np.all(np.isfinite(index.vectors))
    assert nn_classify(index.vectors[1], index) == 1
    assert index.source_clip_ids == {"a", "b", "c"}


def test_window_features(rng):
    backbone = build_vggish_like(channels=(2,) * 6, dense_units=(8, 8, 4), rng=0)
    assert window_features(backbone, rng.random((64, 200)), MEL64).shape == (2, 4)

    clips = random_clips(rng, 2, 2, bins=64, frames=200)
    index = build_feature_index(backbone, clips, MEL64)
    assert len(index) == 8
    assert index.labels.tolist() == [0, 0, 0, 0, 1, 1, 1, 1]
    assert index.clip_ids.tolist() == [clip.clip_id for clip in clips for _ in range(2)]
    with pytest.raises(ArgumentError):
        build_feature_index(backbone, [], MEL64)

    classifier = build_vggish_like(channels=(2,) * 6, dense_units=(8, 8, 4), head="softmax", head_units=2, rng=0)
    with pytest.raises(ArgumentError):
        window_features(classifier, rng.random((64, 200)), MEL64)


@pytest.mark.slow
def test_nn_mfcc_separates_synthetic_timbres(tmp_path):
    manifest = synth_dataset(str(tmp_path), n_classes=10, clips_per_class=6, seed=3)
    cfg = MEL128.stft
    train = [e for e in manifest.entries if e.fold == "1"]
    held_out = [e for e in manifest.entries if e.fold != "1"]
    index = build_mfcc_index(
        [load_wave(e.path, cfg.sample_rate) for e in train],
        [manifest.label_index(e.label) for e in train],
        cfg,
    )
    correct = [
        nn_classify(clip_mfcc(load_wave(e.path, cfg.sample_rate), cfg), index) == manifest.label_index(e.label)
        for e in held_out
    ]
    assert np.mean(correct) >= 0.3
