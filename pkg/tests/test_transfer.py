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
from numpy.testing import assert_array_equal
from scipy.stats import binomtest

from conftest import random_clips
from lowdata_audio.baselines import build_feature_index, nn_classify_voted, window_features
from lowdata_audio.errors import CheckpointError, FormatError
from lowdata_audio.frontend import MEL128, MEL64, LogCompression
from lowdata_audio.labctl.dataset import load_clips
from lowdata_audio.labctl.experiment import subsample_train
from lowdata_audio.labctl.synth import synth_dataset
from lowdata_audio.ndgrad import OptimizerConfig
from lowdata_audio.protohead import ProtoConfig
from lowdata_audio.transfer import (
    Checkpoint,
    fine_tune_proto,
    fine_tune_softmax,
    graph_with_head,
    import_npz,
    load_checkpoint,
    pretext_model,
    pretext_pretrain,
    read_checkpoint,
    save_checkpoint,
    write_checkpoint
)
from lowdata_audio.zoo import build_timbre, build_vgg, build_vggish_like, classifier_fn, evaluate, train_classifier


NARROW = {"channels": (2,) * 6, "dense_units": (8, 8, 4)}


def _backbone(rng=0, **kwargs) -> Checkpoint:
    graph = build_vggish_like(rng=rng, **NARROW, **kwargs)
    return Checkpoint.from_graph(graph, include_head=False)


def _assert_same_state(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    assert list(sa) == list(sb)
    for name in sa:
        assert_array_equal(sa[name], sb[name])


def test_timbre_round_trip(tmp_path, rng):
    graph = build_timbre(3, rng=0)
    path = str(tmp_path / "timbre.ldac")
    save_checkpoint(graph, path, preset="mel128", note="test")
    loaded = load_checkpoint(path, expected_arch="timbre")
    _assert_same_state(graph, loaded)
    batch = rng.random((2, 128, 128))
    assert_array_equal(graph.forward(batch).data, loaded.forward(batch).data)

    ckpt = read_checkpoint(path)
    assert (ckpt.preset, ckpt.note, ckpt.format_version) == ("mel128", "test", 1)


def test_vgg_round_trip_keeps_batch_norm_statistics(tmp_path, rng):
    graph = build_vgg(3, filters_per_layer=2, rng=0)
    graph.forward(rng.random((4, 128, 128)), mode="train", rng=rng)
    path = str(tmp_path / "vgg.ldac")
    save_checkpoint(graph, path, preset="mel128")
    loaded = load_checkpoint(path)
    _assert_same_state(graph, loaded)
    assert not np.allclose(loaded.named_buffers()["bn1/running_mean"], 0.0)


def test_vggish_round_trip_with_learned_compression(tmp_path):
    graph = build_vggish_like(compression=LogCompression.log_learn(pre_alpha=3.0, pre_beta=-1.0), rng=0, **NARROW)
    graph.named_parameters()["compress/pre_alpha"].data = np.array([2.5])
    path = str(tmp_path / "vggish.ldac")
    save_checkpoint(graph, path)
    loaded = load_checkpoint(path, expected_arch="vggish_like")
    _assert_same_state(graph, loaded)
    assert loaded.named_parameters()["compress/pre_alpha"].data[0] == 2.5


def test_architecture_mismatch(tmp_path):
    path = str(tmp_path / "timbre.ldac")
    save_checkpoint(build_timbre(3, rng=0), path, preset="mel128")
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expected_arch="vgg")


def test_corrupt_files(tmp_path):
    path = tmp_path / "timbre.ldac"
    save_checkpoint(build_timbre(2, rng=0), str(path), preset="mel128")
    content = path.read_bytes()

    truncated = tmp_path / "truncated.ldac"
    truncated.write_bytes(content[:-8])
    with pytest.raises(FormatError):
        read_checkpoint(str(truncated))

    trailing = tmp_path / "trailing.ldac"
    trailing.write_bytes(content + b"\0" * 8)
    with pytest.raises(FormatError):
        read_checkpoint(str(trailing))

    magic = tmp_path / "magic.ldac"
    magic.write_bytes(b"XXXX" + content[4:])
    with pytest.raises(FormatError):
        read_checkpoint(str(magic))

    version = tmp_path / "version.ldac"
    version.write_bytes(content[:4] + np.array([2], dtype="<u4").tobytes() + content[8:])
    with pytest.raises(FormatError):
        read_checkpoint(str(version))

    header = tmp_path / "header.ldac"
    header.write_bytes(content[:20])
    with pytest.raises(FormatError):
        read_checkpoint(str(header))


def test_backbone_checkpoints_drop_the_head(tmp_path):
    graph = build_vggish_like(head="softmax", head_units=3, rng=0, **NARROW)
    ckpt = Checkpoint.from_graph(graph, include_head=False)
    assert not any(name.startswith("head") for name in ckpt.blobs)
    assert ckpt.hyperparams["head"] is None
    path = str(tmp_path / "backbone.ldac")
    write_checkpoint(ckpt, path)
    assert load_checkpoint(path).output_kind == "features"


def test_graph_with_head_assigns_parameter_groups():
    graph = graph_with_head(_backbone(), "softmax", 3, rng=1)
    for name, param in graph.named_parameters().items():
        assert param.group == ("fast" if name.startswith("head/") else "slow")
    assert graph.n_outputs == 3

    embed = graph_with_head(_backbone(), "embedding", 5, rng=1)
    assert embed.output_kind == "linear_embedding"
    assert embed.n_outputs == 5


def test_graph_with_head_rejects_other_checkpoints():
    with pytest.raises(CheckpointError):
        graph_with_head(Checkpoint.from_graph(build_timbre(2, rng=0)), "softmax", 2)
    ckpt = _backbone()
    del ckpt.blobs["conv3/kernel"]
    with pytest.raises(CheckpointError):
        graph_with_head(ckpt, "softmax", 2)


def test_zero_slow_rate_freezes_the_backbone(rng):
    ckpt = _backbone()
    clips = random_clips(rng, 2, 2, bins=64, frames=100)
    model = fine_tune_softmax(ckpt, clips, 2, OptimizerConfig(slow_lr=0.0, batch_size=4), epochs=2, rng=3)
    state = model.graph.state_dict()
    for name, value in ckpt.blobs.items():
        assert_array_equal(state[name], value)
    head = build_vggish_like(head="softmax", head_units=2, rng=0, **NARROW)
    assert model.epochs_trained == 2
    assert model.graph.named_parameters()["head/softmax/weight"].shape == head.named_parameters()["head/softmax/weight"].shape
    assert 0.0 <= model.evaluate(clips) <= 1.0


def test_fine_tuning_rejects_wide_clips(rng):
    with pytest.raises(CheckpointError):
        fine_tune_softmax(_backbone(), random_clips(rng, 2, 1), 2, epochs=1, rng=0)


def test_import_npz(tmp_path):
    source = build_vggish_like(rng=4, **NARROW)
    path = str(tmp_path / "weights.npz")
    state = {name: p.data for name, p in source.named_parameters().items()}
    np.savez(path, **state)
    ckpt = import_npz(path, **NARROW)
    for name, value in state.items():
        assert_array_equal(ckpt.blobs[name], value)

    del state["fc2/bias"]
    np.savez(path, **state)
    with pytest.raises(CheckpointError):
        import_npz(path, **NARROW)


def test_pretext_pretraining_is_deterministic(rng):
    clips = random_clips(rng, 2, 2, bins=64, frames=100)
    opt = OptimizerConfig(batch_size=4)
    first = pretext_pretrain(clips, 2, 1, channels=NARROW["channels"], dense_units=NARROW["dense_units"], opt=opt, rng=3)
    second = pretext_pretrain(clips, 2, 1, channels=NARROW["channels"], dense_units=NARROW["dense_units"], opt=opt, rng=3)
    assert list(first.blobs) == list(second.blobs)
    for name in first.blobs:
        assert_array_equal(first.blobs[name], second.blobs[name])
    assert first.preset == "mel64"
    assert not any(name.startswith("head") for name in first.blobs)


def test_fine_tune_proto_with_an_epoch_limit(rng, tmp_path):
    clips = random_clips(rng, 2, 2, bins=64, frames=100)
    config = ProtoConfig(support_size=2, queries_per_class=2, patience=5, max_epochs=2)
    model = fine_tune_proto(
        _backbone(), clips, 2, embed_dim=3, opt=OptimizerConfig(batch_size=8), config=config, rng=0,
        eval_clips=clips, trace_path=str(tmp_path / "trace.csv"),
    )
    assert model.epochs_trained == 2
    assert model.prototypes.mu.shape == (2, 3)
    assert (tmp_path / "trace.csv").exists()
    assert 0.0 <= model.evaluate(clips) <= 1.0


@pytest.mark.slow
def test_pretext_model_learns_separable_classes(rng):
    clips = random_clips(rng, 2, 8, bins=64, frames=100)
    graph = pretext_model(
        clips, 2, 40, channels=(4,) * 6, dense_units=(16, 16, 8), opt=OptimizerConfig(batch_size=16), rng=0,
    )
    assert evaluate(classifier_fn(graph), clips, MEL64) >= 0.75


DESK = {"channels": (4, 8, 8, 16, 16, 16), "dense_units": (32, 32, 16)}
TARGET_CLASSES = 5


@pytest.fixture(scope="module")
def transfer_task(tmp_path_factory):
    """A backbone pre-trained on eight source timbres and a five-class target set."""
    source = synth_dataset(str(tmp_path_factory.mktemp("source")), n_classes=8, clips_per_class=12, seed=11)
    target = synth_dataset(str(tmp_path_factory.mktemp("target")), n_classes=TARGET_CLASSES, clips_per_class=12, seed=12)
    ckpt = pretext_pretrain(
        load_clips(source, source.entries, MEL64),
        source.n_classes,
        30,
        opt=OptimizerConfig(batch_size=32),
        rng=0,
        **DESK,
    )
    return ckpt, target


def _target_split(target, n, seed):
    context = target.fold_contexts()[0]
    train = subsample_train(target, context, n, np.random.default_rng(seed))
    return context, train


def _fine_tuned_accuracy(ckpt, target, context, train, seed):
    model = fine_tune_softmax(
        ckpt, load_clips(target, train, MEL64), TARGET_CLASSES, OptimizerConfig(batch_size=32), epochs=30, rng=seed,
    )
    return model.evaluate(load_clips(target, context.eval, MEL64))


@pytest.mark.slow
def test_pretrained_backbone_fine_tunes_at_least_as_well_as_random_init(transfer_task):
    ckpt, target = transfer_task
    pretrained, scratch = [], []
    for seed in range(10):
        context, train = _target_split(target, 2, seed)
        random_init = Checkpoint.from_graph(build_vggish_like(rng=100 + seed, **DESK), include_head=False)
        pretrained.append(_fine_tuned_accuracy(ckpt, target, context, train, seed))
        scratch.append(_fine_tuned_accuracy(random_init, target, context, train, seed))
    assert np.mean(pretrained) >= np.mean(scratch)


@pytest.mark.slow
def test_transfer_beats_vgg_from_scratch_at_two_clips_per_class(transfer_task):
    ckpt, target = transfer_task
    wins = losses = 0
    transfer, scratch = [], []
    for seed in range(10):
        context, train = _target_split(target, 2, seed)
        transfer.append(_fine_tuned_accuracy(ckpt, target, context, train, seed))

        graph = build_vgg(TARGET_CLASSES, filters_per_layer=8, rng=seed)
        train_classifier(graph, load_clips(target, train, MEL128), OptimizerConfig(batch_size=32), epochs=30, rng=seed)
        scratch.append(evaluate(classifier_fn(graph), load_clips(target, context.eval, MEL128), MEL128))

        wins += transfer[-1] > scratch[-1]
        losses += transfer[-1] < scratch[-1]
    assert np.mean(transfer) > np.mean(scratch)
    assert binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue < 0.05


@pytest.mark.slow
def test_pretext_features_beat_random_features_for_nearest_neighbors(transfer_task):
    ckpt, target = transfer_task
    context, train = _target_split(target, 5, 0)
    train_clips = load_clips(target, train, MEL64)
    eval_clips = load_clips(target, context.eval, MEL64)

    def nn_accuracy(backbone):
        index = build_feature_index(backbone, train_clips, MEL64)
        votes = [nn_classify_voted(list(window_features(backbone, clip.mel, MEL64)), index) for clip in eval_clips]
        return np.mean(np.equal(votes, [clip.label for clip in eval_clips]))

    pretrained = ckpt.to_graph(expected_arch="vggish_like")
    assert nn_accuracy(pretrained) >= nn_accuracy(build_vggish_like(rng=7, **DESK))
    assert nn_accuracy(pretrained) >= 2.0 / TARGET_CLASSES
