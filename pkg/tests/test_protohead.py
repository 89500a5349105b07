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
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from conftest import numerical_grad, random_clips, relative_error
from lowdata_audio.errors import ArgumentError, DataError, DimensionError
from lowdata_audio.frontend import MEL128, sample_patch
from lowdata_audio.ndgrad import OptimizerConfig, Tensor
from lowdata_audio.protohead import (
    EpochRecord,
    PlateauStopper,
    PrototypeSet,
    ProtoConfig,
    SupportSet,
    classify_query,
    compute_prototypes,
    distance,
    emit_trace,
    episode_loss,
    posterior,
    proto_train_step,
    sample_support,
    train_until_plateau
)
from lowdata_audio.zoo import build_proto_vgg, build_timbre


def _embed(embed_dim: int = 3):
    return build_proto_vgg(embed_dim=embed_dim, filters_per_layer=2, rng=0)


def _queries(clips, per_class, rng):
    queries = []
    for k in sorted({clip.label for clip in clips}):
        class_clips = [clip for clip in clips if clip.label == k]
        for i in range(per_class):
            clip = class_clips[i % len(class_clips)]
            queries.append(sample_patch(clip.mel, 128, rng, label=k, clip_id=clip.clip_id))
    return queries


def test_prototypes_are_class_means_of_embeddings(rng):
    embed = _embed()
    support = sample_support(random_clips(rng, 3, 2), n_classes=3, support_size=4, n_frames=128, rng=rng)
    protos = compute_prototypes(support, embed)
    assert protos.mu.shape == (3, 3)
    for k, class_patches in enumerate(support.patches):
        single = [embed.forward(patch.values[None]).data[0] for patch in class_patches]
        assert_allclose(protos.mu.data[k], np.mean(single, axis=0), rtol=0, atol=1e-12)


def test_compute_prototypes_needs_an_embedding_graph(rng):
    support = sample_support(random_clips(rng, 2, 1), n_classes=2, support_size=1, n_frames=128, rng=rng)
    with pytest.raises(ArgumentError):
        compute_prototypes(support, build_timbre(2, rng=0))


def test_distance_examples():
    assert distance([0.0, 0.0], [3.0, 4.0]) == pytest.approx(5.0)
    assert distance([0.0, 0.0], [3.0, 4.0], squared=True) == pytest.approx(25.0)
    assert distance([1.0, 0.0], [0.0, 1.0], kind="cosine") == pytest.approx(1.0)
    assert distance([1.0, 0.0], [2.0, 0.0], kind="cosine") == pytest.approx(0.0)
    with pytest.raises(ArgumentError):
        distance([1.0, 0.0], [1.0, 0.0, 0.0])
    with pytest.raises(ArgumentError):
        distance([1.0], [2.0], kind="manhattan")


def test_posterior_of_distances(rng):
    assert_allclose(posterior([0.0, 1.0]), [0.73106, 0.26894], atol=1e-5)
    for _ in range(20):
        d = rng.random(int(rng.integers(2, 8))) * 10.0
        p = posterior(d)
        assert p.sum() == pytest.approx(1.0)
        assert p.argmax() == d.argmin()


def test_episode_loss_matches_query_posteriors(rng):
    embed = _embed()
    clips = random_clips(rng, 2, 3)
    support = sample_support(clips, 2, 3, 128, rng)
    queries = _queries(clips, 2, rng)
    config = ProtoConfig(support_size=3, queries_per_class=2)

    loss, probs = episode_loss(embed, support, queries, config, mode="eval")
    protos = compute_prototypes(support, embed)
    expected = np.array([classify_query(q, protos, embed) for q in queries])
    assert_allclose(probs, expected, rtol=0, atol=1e-10)
    labels = [q.label for q in queries]
    assert loss.item() == pytest.approx(-np.mean(np.log(expected[np.arange(len(queries)), labels])), abs=1e-10)


def test_episode_loss_gradient_reaches_the_embedding_layer(rng):
    embed = _embed()
    clips = random_clips(rng, 2, 2)
    support = sample_support(clips, 2, 2, 128, rng)
    queries = _queries(clips, 2, rng)
    config = ProtoConfig(support_size=2, queries_per_class=2)
    weight = embed.named_parameters()["embedding/weight"]

    embed.zero_grad()
    loss, _ = episode_loss(embed, support, queries, config, mode="eval")
    loss.backward()
    numeric = numerical_grad(
        lambda: episode_loss(embed, support, queries, config, mode="eval")[0].item(),
        weight.tensor.data,
    )
    assert relative_error(weight.grad, numeric) < 1e-5


def test_classify_query_checks_the_embedding_size(rng):
    protos = PrototypeSet(Tensor(rng.random((2, 4))))
    with pytest.raises(DimensionError):
        classify_query(rng.random((128, 128)), protos, _embed(embed_dim=3))


def test_proto_train_step_requires_balanced_queries(rng):
    embed = _embed()
    clips = random_clips(rng, 2, 2)
    support = sample_support(clips, 2, 2, 128, rng)
    queries = _queries(clips, 2, rng)
    config = ProtoConfig(support_size=2, queries_per_class=2)
    with pytest.raises(ArgumentError):
        proto_train_step(embed, support, queries[:-1], OptimizerConfig(), config)

    before = embed.named_parameters()["embedding/weight"].data.copy()
    loss, correct = proto_train_step(embed, support, queries, OptimizerConfig(), config)
    assert np.isfinite(loss)
    assert 0 <= correct <= 4
    assert not np.array_equal(before, embed.named_parameters()["embedding/weight"].data)


def test_plateau_stopper_waits_for_its_patience():
    stopper = PlateauStopper(patience=200)
    stopped_at = None
    for epoch in range(1, 1000):
        if stopper.update(min(epoch, 37) / 37):
            stopped_at = epoch
            break
    assert stopped_at == 237
    assert stopper.best_epoch == 37
    with pytest.raises(ArgumentError):
        PlateauStopper(patience=0)


def test_support_set_validation(rng):
    patch = sample_patch(rng.random((128, 128)), 128, rng)
    with pytest.raises(ArgumentError):
        SupportSet([[patch]])
    with pytest.raises(ArgumentError):
        SupportSet([[patch], []])
    with pytest.raises(ArgumentError):
        SupportSet([[patch], [patch, patch]])
    assert SupportSet([[patch], [patch]]).size == 1


def test_support_from_a_single_clip_per_class(rng):
    clips = random_clips(rng, 3, 1)
    support = sample_support(clips, 3, 5, 128, rng)
    assert support.size == 5
    for k, class_patches in enumerate(support.patches):
        assert {patch.clip_id for patch in class_patches} == {clips[k].clip_id}
    assert len(support.source_clip_ids) == 3
    with pytest.raises(DataError):
        sample_support(clips[:2], 3, 5, 128, rng)


def test_proto_config_validation():
    with pytest.raises(ArgumentError):
        ProtoConfig(distance="manhattan")
    with pytest.raises(ArgumentError):
        ProtoConfig(support_size=0)
    with pytest.raises(ArgumentError):
        ProtoConfig(max_epochs=0)


def test_train_until_plateau_short_run(rng, tmp_path):
    embed = _embed()
    clips = random_clips(rng, 2, 2)
    eval_clips = random_clips(rng, 2, 1)
    config = ProtoConfig(support_size=2, queries_per_class=2, patience=2, max_epochs=3)
    support = sample_support(clips, 2, 2, 128, rng)
    trace_path = str(tmp_path / "trace.csv")

    model = train_until_plateau(
        embed, clips, support, MEL128, OptimizerConfig(batch_size=8), config, rng,
        eval_clips=eval_clips, trace_path=trace_path,
    )
    assert 1 <= model.epochs_trained <= 3
    assert len(model.trace) == model.epochs_trained
    assert all(record.test_acc is not None for record in model.trace)
    assert model.seen_clip_ids == {clip.clip_id for clip in clips}
    assert 0.0 <= model.evaluate(eval_clips) <= 1.0
    assert model.predict(eval_clips[0].mel).sum() == pytest.approx(1.0)

    trace = pd.read_csv(trace_path)
    assert list(trace.columns) == ["epoch", "train_acc", "test_acc"]
    assert trace["epoch"].tolist() == list(range(1, model.epochs_trained + 1))


def test_emit_trace_without_held_out_accuracies(tmp_path):
    frame = emit_trace([EpochRecord(1, 0.5), EpochRecord(2, 0.75)], str(tmp_path / "t.csv"))
    assert frame["train_acc"].tolist() == [0.5, 0.75]
    assert frame["test_acc"].isna().all()


def test_classify_query_matches_hand_evaluated_posteriors(rng):
    embed = _embed()
    for _ in range(20):
        k = int(rng.integers(2, 6))
        mu = rng.standard_normal((k, 3))
        x = rng.random((128, 128))
        e = embed.forward(x[None]).data[0]
        d = np.sqrt(((mu - e) ** 2).sum(axis=1))
        expected = np.exp(-d) / np.exp(-d).sum()
        assert_allclose(classify_query(x, PrototypeSet(Tensor(mu)), embed), expected, rtol=0, atol=1e-9)
