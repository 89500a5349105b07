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

"""Checkpoints, pretext pre-training and dual-rate fine-tuning.

A checkpoint file is laid out as

    b"LDAC" | version (uint32 LE) | header length (uint32 LE) | JSON header | blobs

where the UTF-8 JSON header names the architecture, its hyperparameters,
the frontend preset, a note and the ordered blob table. Blobs are raw
little-endian float64 arrays in table order.
"""

from typing import Any, Sequence

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from lowdata_audio.errors import CheckpointError, FormatError
from lowdata_audio.frontend import MEL64, get_preset
from lowdata_audio.models import Clip, FrontendPreset
from lowdata_audio.ndgrad.optim import OptimizerConfig
from lowdata_audio.protohead import ProtoConfig, TrainedModel, sample_support, train_until_plateau
from lowdata_audio.utils import make_rng
from lowdata_audio.zoo import HEAD_PREFIX, ModelGraph, build_vggish_like, rebuild, train_classifier


logger = logging.getLogger(__name__)


MAGIC = b"LDAC"
FORMAT_VERSION = 1
BLOB_DTYPE = np.dtype("<f8")
BLOB_KINDS = ("param", "buffer")


@dataclass
class Checkpoint:
    """The transferable state of a graph.

    Attrs:
        arch: The architecture name.
        hyperparams: The builder arguments of the architecture.
        blobs: The named arrays in forward order.
        kinds: 'param' or 'buffer' by blob name.
        preset: The frontend preset ID of the inputs.
        note: A free-form provenance note.
        format_version: The file format version.
    """
    arch: str
    hyperparams: dict[str, Any]
    blobs: dict[str, np.ndarray]
    kinds: dict[str, str] = field(default_factory=dict)
    preset: str = MEL64.id
    note: str = ""
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_graph(
        cls,
        graph: ModelGraph,
        preset: str = MEL64.id,
        note: str = "",
        include_head: bool = True
    ) -> "Checkpoint":
        """Snapshot a graph; without its head the checkpoint describes the backbone."""
        hyperparams = dict(graph.hyperparams)
        if not include_head and "head" in hyperparams:
            hyperparams.update(head=None, head_units=None)
        blobs = graph.state_dict(include_head=include_head)
        buffers = graph.named_buffers()
        kinds = {name: "buffer" if name in buffers else "param" for name in blobs}
        return cls(arch=graph.arch, hyperparams=hyperparams, blobs=blobs, kinds=kinds, preset=preset, note=note)

    def to_graph(self, expected_arch: str | None = None) -> ModelGraph:
        """Rebuild the graph and load every blob.

        Raises:
            CheckpointError: The architecture or a blob doesn't match.
        """
        if expected_arch is not None and self.arch != expected_arch:
            first = next(iter(self.blobs), "<none>")
            raise CheckpointError(
                f"Blob '{first}' belongs to a {self.arch} checkpoint but {expected_arch} was expected"
            )
        graph = rebuild(self.arch, self.hyperparams)
        graph.load_state_dict(self.blobs)
        return graph


def write_checkpoint(ckpt: Checkpoint, path: str) -> None:
    table = []
    for name, value in ckpt.blobs.items():
        kind = ckpt.kinds.get(name, "param")
        if kind not in BLOB_KINDS:
            raise CheckpointError(f"Blob '{name}' has unknown kind '{kind}'")
        table.append({"name": name, "shape": list(np.shape(value)), "kind": kind})
    header = json.dumps(
        {
            "arch": ckpt.arch,
            "hyperparams": ckpt.hyperparams,
            "preset": ckpt.preset,
            "note": ckpt.note,
            "blobs": table,
        },
        ensure_ascii=False,
    ).encode("utf-8")

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.array([ckpt.format_version, len(header)], dtype="<u4").tobytes())
        f.write(header)
        for value in ckpt.blobs.values():
            f.write(np.ascontiguousarray(value, dtype=BLOB_DTYPE).tobytes())


def read_checkpoint(path: str) -> Checkpoint:
    """Parse a checkpoint file.

    Raises:
        FormatError: The file is truncated, corrupt or of another version.
    """
    with open(path, "rb") as f:
        content = f.read()

    prefix = len(MAGIC) + 8
    if len(content) < prefix or content[:len(MAGIC)] != MAGIC:
        raise FormatError(f"'{path}' is no checkpoint file")
    version, header_size = (int(v) for v in np.frombuffer(content[len(MAGIC):prefix], dtype="<u4"))
    if version != FORMAT_VERSION:
        raise FormatError(f"'{path}' has format version {version} but only {FORMAT_VERSION} is supported")
    if len(content) < prefix + header_size:
        raise FormatError(f"'{path}' is truncated inside its header")
    try:
        header = json.loads(content[prefix:prefix + header_size].decode("utf-8"))
        table = header["blobs"]
        arch, hyperparams = header["arch"], header["hyperparams"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise FormatError(f"'{path}' has a corrupt header: {e}") from e

    blobs, kinds = {}, {}
    offset = prefix + header_size
    for entry in table:
        shape = tuple(int(s) for s in entry["shape"])
        size = int(np.prod(shape)) * BLOB_DTYPE.itemsize
        if offset + size > len(content):
            raise FormatError(f"'{path}' is truncated inside blob '{entry['name']}'")
        blobs[entry["name"]] = np.frombuffer(content, dtype=BLOB_DTYPE, count=size // BLOB_DTYPE.itemsize, offset=offset).reshape(shape).astype(np.float64)
        kinds[entry["name"]] = entry.get("kind", "param")
        offset += size
    if offset != len(content):
        raise FormatError(f"'{path}' has {len(content) - offset} trailing bytes")

    return Checkpoint(
        arch=arch,
        hyperparams=hyperparams,
        blobs=blobs,
        kinds=kinds,
        preset=header.get("preset", MEL64.id),
        note=header.get("note", ""),
        format_version=version,
    )


def save_checkpoint(model: ModelGraph, path: str, preset: str = MEL64.id, note: str = "") -> Checkpoint:
    ckpt = Checkpoint.from_graph(model, preset=preset, note=note)
    write_checkpoint(ckpt, path)
    logger.info(f"Saved a {model.arch} checkpoint with {len(ckpt.blobs)} blobs to '{path}'")
    return ckpt


def load_checkpoint(path: str, expected_arch: str | None = None) -> ModelGraph:
    """Load a graph from a checkpoint file.

    Raises:
        FormatError: The file is truncated or corrupt.
        CheckpointError: The architecture or a blob shape doesn't match.
    """
    return read_checkpoint(path).to_graph(expected_arch)


def import_npz(path: str, preset: str = MEL64.id, **hyperparams) -> Checkpoint:
    """Import externally converted vggish-like backbone weights.

    The archive has to hold one array per backbone parameter, keyed by
    the parameter names of `build_vggish_like(**hyperparams)`.

    Raises:
        CheckpointError: An array is missing, unexpected or mis-shaped.
    """
    graph = build_vggish_like(**hyperparams)
    with np.load(path) as archive:
        state = {name: archive[name] for name in archive.files}
    graph.load_state_dict(state)
    return Checkpoint.from_graph(graph, preset=preset, note=f"imported from {path}")


def pretext_model(
    source_clips: Sequence[Clip],
    n_classes: int,
    epochs: int,
    preset: FrontendPreset = MEL64,
    channels: Sequence[int] = (64, 128, 256, 256, 512, 512),
    dense_units: Sequence[int] = (4096, 4096, 128),
    opt: OptimizerConfig | None = None,
    rng: np.random.Generator | int | None = None
) -> ModelGraph:
    """Train the vggish-like backbone with a temporary softmax head on a source task."""
    rng = make_rng(rng)
    graph = build_vggish_like(
        n_mels=preset.n_mels,
        n_frames=preset.n_frames,
        channels=channels,
        dense_units=dense_units,
        head="softmax",
        head_units=n_classes,
        rng=rng,
    )
    train_classifier(graph, source_clips, opt or OptimizerConfig(), epochs=epochs, rng=rng)
    return graph


def pretext_pretrain(
    source_clips: Sequence[Clip],
    n_classes: int,
    epochs: int,
    preset: FrontendPreset = MEL64,
    channels: Sequence[int] = (64, 128, 256, 256, 512, 512),
    dense_units: Sequence[int] = (4096, 4096, 128),
    opt: OptimizerConfig | None = None,
    rng: np.random.Generator | int | None = None
) -> Checkpoint:
    """Pre-train the backbone on a source task and return its checkpoint.

    The same seed gives a bitwise identical checkpoint.
    """
    graph = pretext_model(source_clips, n_classes, epochs, preset, channels, dense_units, opt, rng)
    note = f"pretext pre-training on {len(source_clips)} clips of {n_classes} classes for {epochs} epochs"
    logger.info(f"Finished {note}")
    return Checkpoint.from_graph(graph, preset=preset.id, note=note, include_head=False)


def graph_with_head(
    ckpt: Checkpoint,
    head: str,
    head_units: int,
    rng: np.random.Generator | int | None = None
) -> ModelGraph:
    """Build the checkpoint backbone with a fresh head.

    Every parameter loaded from the checkpoint joins the 'slow' group and
    every new parameter stays in the 'fast' group.

    Raises:
        CheckpointError: The checkpoint holds no vggish-like backbone or
            doesn't cover it.
    """
    if ckpt.arch != "vggish_like":
        first = next(iter(ckpt.blobs), "<none>")
        raise CheckpointError(f"Blob '{first}' belongs to a {ckpt.arch} checkpoint but a vggish_like backbone is needed")
    hyperparams = dict(ckpt.hyperparams, head=head, head_units=head_units)
    graph = rebuild("vggish_like", hyperparams, rng=make_rng(rng))
    loaded = graph.load_state_dict(ckpt.blobs, partial=True)
    missing = [
        name for name in graph.named_parameters()
        if name not in ckpt.blobs and not name.startswith(HEAD_PREFIX)
    ]
    if missing:
        raise CheckpointError(f"Blob '{missing[0]}' of the backbone is missing from the checkpoint")
    graph.set_group(loaded, "slow")
    return graph


def _check_inputs(graph: ModelGraph, clips: Sequence[Clip]) -> None:
    for clip in clips:
        if clip.mel.shape[0] != graph.input_shape[0]:
            raise CheckpointError(
                f"Clip '{clip.clip_id}' has {clip.mel.shape[0]} mel bands but the checkpoint expects {graph.input_shape[0]}"
            )


def fine_tune_softmax(
    ckpt: Checkpoint,
    target_clips: Sequence[Clip],
    n_classes: int,
    opt: OptimizerConfig | None = None,
    epochs: int = 200,
    rng: np.random.Generator | int | None = None
) -> TrainedModel:
    """Fine-tune the backbone together with a new dense softmax layer for a fixed number of epochs."""
    rng = make_rng(rng)
    graph = graph_with_head(ckpt, "softmax", n_classes, rng)
    _check_inputs(graph, target_clips)
    trace = train_classifier(graph, target_clips, opt or OptimizerConfig(), epochs=epochs, rng=rng)
    return TrainedModel(
        graph=graph,
        preset=get_preset(ckpt.preset),
        epochs_trained=epochs,
        seen_clip_ids=trace.seen_clip_ids,
    )


def fine_tune_proto(
    ckpt: Checkpoint,
    target_clips: Sequence[Clip],
    n_classes: int,
    embed_dim: int = 10,
    opt: OptimizerConfig | None = None,
    config: ProtoConfig | None = None,
    rng: np.random.Generator | int | None = None,
    eval_clips: Sequence[Clip] | None = None,
    trace_path: str | None = None
) -> TrainedModel:
    """Fine-tune the backbone with a new linear embedding layer until the train accuracy plateaus."""
    rng = make_rng(rng)
    config = config or ProtoConfig()
    graph = graph_with_head(ckpt, "embedding", embed_dim, rng)
    _check_inputs(graph, target_clips)
    preset = get_preset(ckpt.preset)
    support = sample_support(target_clips, n_classes, config.support_size, preset.n_frames, rng)
    return train_until_plateau(
        graph,
        target_clips,
        support,
        preset,
        opt=opt,
        config=config,
        rng=rng,
        eval_clips=eval_clips,
        trace_path=trace_path,
    )
