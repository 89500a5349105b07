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

"""Layer descriptors, model graphs and the five architecture builders."""

from typing import Any, Iterable, Sequence

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from lowdata_audio.errors import ArgumentError, CheckpointError, DimensionError
from lowdata_audio.frontend import ClassifierFn, LogCompression, compress, sample_patch, windowed_predict
from lowdata_audio.models import PATCH_SHAPES, Clip, FrontendPreset
from lowdata_audio.ndgrad import ops
from lowdata_audio.ndgrad.optim import OptimizerConfig, sgd_step, zero_grad
from lowdata_audio.ndgrad.tensor import Parameter, RunningStats, Tensor
from lowdata_audio.utils import make_rng


logger = logging.getLogger(__name__)


ARCHS = ("timbre", "vgg", "sbcnn", "proto_vgg", "vggish_like")
OUTPUT_KINDS = ("softmax", "linear_embedding", "features")
HEADS = ("softmax", "embedding")
WEIGHT_DECAY = 0.001
DROPOUT = 0.5
HEAD_PREFIX = "head"

Shape = tuple[int, ...]


def _glorot(fan_in: int, fan_out: int, shape: Shape, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _he(fan_in: int, shape: Shape, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


@dataclass(eq=False)
class Layer:
    """A layer descriptor.

    Shapes exclude the batch axis. Parameters are created by `init` from
    the input shape.
    """
    name: str

    def output_shape(self, shape: Shape) -> Shape:
        return shape

    def param_shapes(self, shape: Shape) -> dict[str, Shape]:
        return {}

    def init(self, shape: Shape, rng: np.random.Generator) -> None:
        pass

    def parameters(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        raise CheckpointError(f"Layer '{self.name}' holds no buffer '{name}'")

    def forward(self, x: Tensor, mode: str, rng: np.random.Generator | None) -> Tensor:
        return x


@dataclass(eq=False)
class Compress(Layer):
    """Compresses (bins, frames) mel power into a one-channel log map."""
    compression: LogCompression = field(default_factory=LogCompression.log_eps)

    def output_shape(self, shape: Shape) -> Shape:
        if len(shape) != 2:
            raise DimensionError(f"Expected (bins, frames) inputs but got {shape}")
        return (1,) + tuple(shape)

    def param_shapes(self, shape: Shape) -> dict[str, Shape]:
        return {p.name: p.shape for p in self.compression.parameters()}

    def parameters(self) -> list[Parameter]:
        return self.compression.parameters()

    def forward(self, x, mode, rng):
        out = compress(x, self.compression)
        return ops.reshape(out, (out.shape[0], 1) + out.shape[1:])


@dataclass(eq=False)
class Conv2D(Layer):
    filters: int = 1
    kernel: tuple[int, int] = (3, 3)
    padding: str = "same"
    weight_decay: float = 0.0
    init_kind: str = "he"
    kernel_param: Parameter | None = field(default=None, repr=False)
    bias_param: Parameter | None = field(default=None, repr=False)

    def output_shape(self, shape):
        channels, h, w = shape
        kh, kw = self.kernel
        if self.padding == "same":
            return (self.filters, h, w)
        if kh > h or kw > w:
            raise DimensionError(f"Kernel {self.kernel} of '{self.name}' doesn't fit into {shape}")
        return (self.filters, h - kh + 1, w - kw + 1)

    def param_shapes(self, shape):
        return {
            f"{self.name}/kernel": (self.filters, shape[0]) + tuple(self.kernel),
            f"{self.name}/bias": (self.filters,),
        }

    def init(self, shape, rng):
        kernel_shape = (self.filters, shape[0]) + tuple(self.kernel)
        fan_in = shape[0] * self.kernel[0] * self.kernel[1]
        fan_out = self.filters * self.kernel[0] * self.kernel[1]
        values = _he(fan_in, kernel_shape, rng) if self.init_kind == "he" else _glorot(fan_in, fan_out, kernel_shape, rng)
        self.kernel_param = Parameter.from_array(values, weight_decay=self.weight_decay, name=f"{self.name}/kernel")
        self.bias_param = Parameter.from_array(np.zeros(self.filters), weight_decay=self.weight_decay, name=f"{self.name}/bias")

    def parameters(self):
        return [self.kernel_param, self.bias_param]

    def forward(self, x, mode, rng):
        return ops.conv2d(x, self.kernel_param, self.bias_param, padding=self.padding)


@dataclass(eq=False)
class BatchNorm(Layer):
    gamma: Parameter | None = field(default=None, repr=False)
    beta: Parameter | None = field(default=None, repr=False)
    stats: RunningStats | None = field(default=None, repr=False)

    def param_shapes(self, shape):
        return {f"{self.name}/gamma": (shape[0],), f"{self.name}/beta": (shape[0],)}

    def init(self, shape, rng):
        self.gamma = Parameter.from_array(np.ones(shape[0]), name=f"{self.name}/gamma")
        self.beta = Parameter.from_array(np.zeros(shape[0]), name=f"{self.name}/beta")
        self.stats = RunningStats.init(shape[0])

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}/running_mean": self.stats.mean, f"{self.name}/running_var": self.stats.var}

    def set_buffer(self, name, value):
        if name == f"{self.name}/running_mean":
            self.stats.mean = np.array(value, dtype=np.float64)
        elif name == f"{self.name}/running_var":
            self.stats.var = np.array(value, dtype=np.float64)
        else:
            super().set_buffer(name, value)

    def forward(self, x, mode, rng):
        return ops.batchnorm(x, self.gamma, self.beta, mode, self.stats)


@dataclass(eq=False)
class Activation(Layer):
    kind: str = "relu"

    def forward(self, x, mode, rng):
        return ops.activation(x, self.kind)


@dataclass(eq=False)
class MaxPool(Layer):
    size: tuple[int, int] = (2, 2)

    def output_shape(self, shape):
        channels, h, w = shape
        ph, pw = self.size
        if h // ph == 0 or w // pw == 0:
            raise DimensionError(f"Pool {self.size} of '{self.name}' doesn't fit into {shape}")
        return (channels, h // ph, w // pw)

    def forward(self, x, mode, rng):
        return ops.maxpool2d(x, tuple(self.size))


@dataclass(eq=False)
class GlobalMaxPool(Layer):

    def output_shape(self, shape):
        return (shape[0],)

    def forward(self, x, mode, rng):
        return ops.global_max(x)


@dataclass(eq=False)
class Flatten(Layer):

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, mode, rng):
        return ops.flatten(x)


@dataclass(eq=False)
class Dropout(Layer):
    rate: float = DROPOUT

    def forward(self, x, mode, rng):
        return ops.dropout(x, self.rate, mode, rng)


@dataclass(eq=False)
class Dense(Layer):
    units: int = 1
    weight_decay: float = 0.0
    init_kind: str = "glorot"
    weight: Parameter | None = field(default=None, repr=False)
    bias: Parameter | None = field(default=None, repr=False)

    def output_shape(self, shape):
        if len(shape) != 1:
            raise DimensionError(f"Dense layer '{self.name}' expects flat inputs but got {shape}")
        return (self.units,)

    def param_shapes(self, shape):
        return {f"{self.name}/weight": (shape[0], self.units), f"{self.name}/bias": (self.units,)}

    def init(self, shape, rng):
        fan_in = shape[0]
        values = _he(fan_in, (fan_in, self.units), rng) if self.init_kind == "he" else _glorot(fan_in, self.units, (fan_in, self.units), rng)
        self.weight = Parameter.from_array(values, weight_decay=self.weight_decay, name=f"{self.name}/weight")
        self.bias = Parameter.from_array(np.zeros(self.units), weight_decay=self.weight_decay, name=f"{self.name}/bias")

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x, mode, rng):
        return ops.dense(x, self.weight, self.bias)


@dataclass(eq=False)
class ModelGraph:
    """An ordered stack of layers with its parameter store.

    Attrs:
        arch: The architecture the graph was built by.
        layers: The layer descriptors in forward order.
        input_shape: The (bins, frames) patch geometry.
        n_outputs: The number of classes or the embedding size.
        output_kind: 'softmax' for classifiers emitting logits,
            'linear_embedding' for embedding networks and 'features' for
            headless backbones.
        hyperparams: The builder arguments that rebuild this graph.
    """
    arch: str
    layers: list[Layer]
    input_shape: tuple[int, int]
    n_outputs: int = 0
    output_kind: str = "softmax"
    hyperparams: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.arch not in ARCHS:
            raise ArgumentError(f"Unknown architecture '{self.arch}', expected one of {ARCHS}")
        if self.output_kind not in OUTPUT_KINDS:
            raise ArgumentError(f"Unknown output kind '{self.output_kind}', expected one of {OUTPUT_KINDS}")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ArgumentError(f"Layer names have to be unique but got {names}")

    def initialize(self, rng: np.random.Generator) -> "ModelGraph":
        shape: Shape = tuple(self.input_shape)
        for layer in self.layers:
            layer.init(shape, rng)
            shape = layer.output_shape(shape)
        self.n_outputs = shape[0]
        return self

    @property
    def params(self) -> list[Parameter]:
        return self.parameters()

    def parameters(self) -> list[Parameter]:
        return [param for layer in self.layers for param in layer.parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {param.name: param for param in self.parameters()}

    def named_buffers(self) -> dict[str, np.ndarray]:
        buffers = {}
        for layer in self.layers:
            buffers.update(layer.buffers())
        return buffers

    def param_count(self) -> int:
        return sum(param.size for param in self.parameters())

    def descriptor_param_count(self) -> int:
        """Count parameters from the layer descriptors alone."""
        total = 0
        shape: Shape = tuple(self.input_shape)
        for layer in self.layers:
            total += sum(int(np.prod(s)) for s in layer.param_shapes(shape).values())
            shape = layer.output_shape(shape)
        return total

    def zero_grad(self) -> None:
        zero_grad(self.parameters())

    def forward(
        self,
        batch: np.ndarray | Tensor,
        mode: str = "eval",
        rng: np.random.Generator | None = None
    ) -> Tensor:
        """Run a (N, bins, frames) batch of mel power patches through the graph.

        Raises:
            DimensionError: The patches don't match the input geometry.
        """
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        if x.ndim != 3 or x.shape[1:] != tuple(self.input_shape):
            raise DimensionError(
                f"{self.arch} expects batches of shape (N, {self.input_shape[0]}, {self.input_shape[1]}) but got {x.shape}"
            )
        for layer in self.layers:
            x = layer.forward(x, mode, rng)
        return x

    def state_dict(self, include_head: bool = True) -> dict[str, np.ndarray]:
        """Copy parameters and buffers by name in forward order."""
        state = {}
        for layer in self.layers:
            if not include_head and layer.name.startswith(HEAD_PREFIX):
                continue
            for param in layer.parameters():
                state[param.name] = param.data.copy()
            for name, value in layer.buffers().items():
                state[name] = np.array(value, dtype=np.float64)
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], partial: bool = False) -> list[str]:
        """Assign named arrays to parameters and buffers.

        All names and shapes are checked before anything is assigned.

        Args:
            state: The arrays by name.
            partial: Allow graph entries without a counterpart in `state`.

        Returns:
            The names of the loaded parameters.

        Raises:
            CheckpointError: Names the first missing, unexpected or
                mis-shaped entry.
        """
        params = self.named_parameters()
        buffers = self.named_buffers()
        for name, value in state.items():
            if name in params:
                expected = params[name].shape
            elif name in buffers:
                expected = buffers[name].shape
            else:
                raise CheckpointError(f"Blob '{name}' has no counterpart in the {self.arch} graph")
            if tuple(np.shape(value)) != tuple(expected):
                raise CheckpointError(f"Blob '{name}' has shape {np.shape(value)} but {self.arch} expects {expected}")
        if not partial:
            for name in list(params) + list(buffers):
                if name not in state:
                    raise CheckpointError(f"Blob '{name}' of the {self.arch} graph is missing")

        owners = {name: layer for layer in self.layers for name in layer.buffers()}
        loaded = []
        for name, value in state.items():
            if name in params:
                params[name].data = np.array(value, dtype=np.float64)
                loaded.append(name)
            else:
                owners[name].set_buffer(name, value)
        return loaded

    def set_group(self, names: Iterable[str], group: str) -> None:
        params = self.named_parameters()
        for name in names:
            params[name].group = group


def stack_patches(patches: Sequence) -> np.ndarray:
    """Stack MelPatches into a (N, bins, frames) batch."""
    return np.stack([patch.values for patch in patches])


def _compression_hparams(compression: LogCompression | None) -> dict[str, Any]:
    compression = compression or LogCompression.log_eps()
    return {"kind": compression.kind, "alpha": compression.alpha, "beta": compression.beta}


def _compression_from_hparams(hparams: dict[str, Any] | None) -> LogCompression:
    if not hparams or hparams["kind"] == "log_eps":
        return LogCompression.log_eps(epsilon=(hparams or {}).get("beta", 1e-10))
    if hparams["kind"] == "log_learn":
        return LogCompression.log_learn()
    return LogCompression.fixed(hparams["alpha"], hparams["beta"])


def _check_classes(n_classes: int) -> None:
    if n_classes < 2:
        raise ArgumentError(f"A classifier needs at least 2 classes but got {n_classes}")


def _vgg_blocks(filters: int, weight_decay: float) -> list[Layer]:
    layers: list[Layer] = []
    for i in range(1, 6):
        layers += [
            Conv2D(f"conv{i}", filters=filters, kernel=(3, 3), padding="same", weight_decay=weight_decay),
            BatchNorm(f"bn{i}"),
            Activation(f"elu{i}", kind="elu"),
            MaxPool(f"pool{i}", size=(2, 2)),
        ]
    return layers


def build_timbre(
    n_classes: int,
    compression: dict[str, Any] | LogCompression | None = None,
    rng: np.random.Generator | int | None = None
) -> ModelGraph:
    """Single-layer CNN with one 108x7 vertical filter per class.

    The global maximum of each feature map is the logit of its class.
    """
    _check_classes(n_classes)
    compression = compression if isinstance(compression, LogCompression) else _compression_from_hparams(compression)
    layers = [
        Compress("compress", compression=compression),
        Conv2D("conv", filters=n_classes, kernel=(108, 7), padding="valid", weight_decay=WEIGHT_DECAY),
        Activation("relu", kind="relu"),
        GlobalMaxPool("global_max"),
    ]
    return ModelGraph(
        arch="timbre",
        layers=layers,
        input_shape=(128, 128),
        output_kind="softmax",
        hyperparams={"n_classes": n_classes, "compression": _compression_hparams(compression)},
    ).initialize(make_rng(rng))


def build_vgg(
    n_classes: int,
    filters_per_layer: int = 32,
    compression: dict[str, Any] | LogCompression | None = None,
    rng: np.random.Generator | int | None = None
) -> ModelGraph:
    """Five 3x3 conv blocks with batch norm, ELU and 2x2 pooling, then a dropout softmax layer."""
    _check_classes(n_classes)
    compression = compression if isinstance(compression, LogCompression) else _compression_from_hparams(compression)
    layers = [Compress("compress", compression=compression)]
    layers += _vgg_blocks(filters_per_layer, WEIGHT_DECAY)
    layers += [
        Flatten("flatten"),
        Dropout("dropout", rate=DROPOUT),
        Dense("dense", units=n_classes, weight_decay=WEIGHT_DECAY),
    ]
    return ModelGraph(
        arch="vgg",
        layers=layers,
        input_shape=(128, 128),
        output_kind="softmax",
        hyperparams={
            "n_classes": n_classes,
            "filters_per_layer": filters_per_layer,
            "compression": _compression_hparams(compression),
        },
    ).initialize(make_rng(rng))


def build_sbcnn(
    n_classes: int,
    compression: dict[str, Any] | LogCompression | None = None,
    rng: np.random.Generator | int | None = None
) -> ModelGraph:
    """Three 5x5 conv layers with (4, 2) pools and a 64-unit dense layer."""
    _check_classes(n_classes)
    compression = compression if isinstance(compression, LogCompression) else _compression_from_hparams(compression)
    layers = [
        Compress("compress", compression=compression),
        Conv2D("conv1", filters=24, kernel=(5, 5), padding="valid", weight_decay=WEIGHT_DECAY),
        Activation("relu1", kind="relu"),
        MaxPool("pool1", size=(4, 2)),
        Conv2D("conv2", filters=48, kernel=(5, 5), padding="valid", weight_decay=WEIGHT_DECAY),
        Activation("relu2", kind="relu"),
        MaxPool("pool2", size=(4, 2)),
        Conv2D("conv3", filters=48, kernel=(5, 5), padding="valid", weight_decay=WEIGHT_DECAY),
        Activation("relu3", kind="relu"),
        Flatten("flatten"),
        Dropout("dropout1", rate=DROPOUT),
        Dense("dense1", units=64, weight_decay=WEIGHT_DECAY, init_kind="he"),
        Activation("relu4", kind="relu"),
        Dropout("dropout2", rate=DROPOUT),
        Dense("dense2", units=n_classes, weight_decay=WEIGHT_DECAY),
    ]
    return ModelGraph(
        arch="sbcnn",
        layers=layers,
        input_shape=(128, 128),
        output_kind="softmax",
        hyperparams={"n_classes": n_classes, "compression": _compression_hparams(compression)},
    ).initialize(make_rng(rng))


def build_proto_vgg(
    embed_dim: int = 10,
    filters_per_layer: int = 128,
    regularize: bool = False,
    compression: dict[str, Any] | LogCompression | None = None,
    rng: np.random.Generator | int | None = None
) -> ModelGraph:
    """The VGG skeleton with a final linear embedding layer.

    Weight decay and dropout are only attached with `regularize`.
    """
    if embed_dim < 1:
        raise ArgumentError(f"The embedding size has to be positive but is {embed_dim}")
    compression = compression if isinstance(compression, LogCompression) else _compression_from_hparams(compression)
    weight_decay = WEIGHT_DECAY if regularize else 0.0
    layers = [Compress("compress", compression=compression)]
    layers += _vgg_blocks(filters_per_layer, weight_decay)
    layers.append(Flatten("flatten"))
    if regularize:
        layers.append(Dropout("dropout", rate=DROPOUT))
    layers.append(Dense("embedding", units=embed_dim, weight_decay=weight_decay))
    return ModelGraph(
        arch="proto_vgg",
        layers=layers,
        input_shape=(128, 128),
        output_kind="linear_embedding",
        hyperparams={
            "embed_dim": embed_dim,
            "filters_per_layer": filters_per_layer,
            "regularize": regularize,
            "compression": _compression_hparams(compression),
        },
    ).initialize(make_rng(rng))


def build_vggish_like(
    n_mels: int = 64,
    n_frames: int = 96,
    channels: Sequence[int] = (64, 128, 256, 256, 512, 512),
    dense_units: Sequence[int] = (4096, 4096, 128),
    head: str | None = None,
    head_units: int | None = None,
    compression: dict[str, Any] | LogCompression | None = None,
    rng: np.random.Generator | int | None = None
) -> ModelGraph:
    """Six 3x3 conv layers with 2x2 pools and three dense layers.

    Pools follow the first, second, fourth and sixth conv layer. Without
    a head the graph outputs the features of the last dense layer. A
    'softmax' head adds a dense classifier with `head_units` classes and an
    'embedding' head a linear embedding of `head_units` dimensions.

    Raises:
        ArgumentError: Unknown geometry, widths or head.
    """
    if (n_mels, n_frames) not in PATCH_SHAPES:
        raise ArgumentError(f"Unsupported patch geometry {(n_mels, n_frames)}, expected one of {PATCH_SHAPES}")
    channels, dense_units = [int(c) for c in channels], [int(u) for u in dense_units]
    if len(channels) != 6 or len(dense_units) != 3:
        raise ArgumentError(f"Expected 6 conv widths and 3 dense widths but got {channels} and {dense_units}")
    if head is not None and (head not in HEADS or not head_units or head_units < 1):
        raise ArgumentError(f"Invalid head {head!r} with {head_units} units, expected one of {HEADS}")
    compression = compression if isinstance(compression, LogCompression) else _compression_from_hparams(compression)

    layers: list[Layer] = [Compress("compress", compression=compression)]
    for i, width in enumerate(channels, start=1):
        layers += [
            Conv2D(f"conv{i}", filters=width, kernel=(3, 3), padding="same"),
            Activation(f"relu{i}", kind="relu"),
        ]
        if i in (1, 2, 4, 6):
            layers.append(MaxPool(f"pool{i}", size=(2, 2)))
    layers.append(Flatten("flatten"))
    for i, units in enumerate(dense_units, start=1):
        layers += [Dense(f"fc{i}", units=units, init_kind="he"), Activation(f"fc_relu{i}", kind="relu")]

    output_kind = "features"
    if head == "softmax":
        _check_classes(head_units)
        layers.append(Dense(f"{HEAD_PREFIX}/softmax", units=head_units))
        output_kind = "softmax"
    elif head == "embedding":
        layers.append(Dense(f"{HEAD_PREFIX}/embedding", units=head_units))
        output_kind = "linear_embedding"

    return ModelGraph(
        arch="vggish_like",
        layers=layers,
        input_shape=(n_mels, n_frames),
        output_kind=output_kind,
        hyperparams={
            "n_mels": n_mels,
            "n_frames": n_frames,
            "channels": channels,
            "dense_units": dense_units,
            "head": head,
            "head_units": head_units,
            "compression": _compression_hparams(compression),
        },
    ).initialize(make_rng(rng))


BUILDERS = {
    "timbre": build_timbre,
    "vgg": build_vgg,
    "sbcnn": build_sbcnn,
    "proto_vgg": build_proto_vgg,
    "vggish_like": build_vggish_like,
}


def rebuild(arch: str, hyperparams: dict[str, Any], rng: np.random.Generator | int | None = None) -> ModelGraph:
    """Build a fresh graph from an architecture name and its hyperparameters."""
    if arch not in BUILDERS:
        raise CheckpointError(f"Unknown architecture '{arch}', expected one of {ARCHS}")
    try:
        return BUILDERS[arch](**hyperparams, rng=rng)
    except TypeError as e:
        raise CheckpointError(f"Hyperparameters {hyperparams} don't fit the {arch} builder: {e}") from e


def classifier_fn(graph: ModelGraph) -> ClassifierFn:
    """Map single windows to softmax posteriors of a classifier graph in eval mode."""
    if graph.output_kind != "softmax":
        raise ArgumentError(f"Graph with {graph.output_kind} outputs is no classifier")

    def posterior(window: np.ndarray) -> np.ndarray:
        logits = graph.forward(window[None], mode="eval").data[0]
        return softmax(logits)

    return posterior


def evaluate(model: ClassifierFn, clips: Sequence[Clip], preset: FrontendPreset) -> float:
    """Return the clip accuracy of windowed predictions.

    Ties between classes resolve to the lowest class index.
    """
    if not clips:
        raise ArgumentError("Can't evaluate on an empty list of clips")
    correct = 0
    for clip in clips:
        posterior = windowed_predict(clip.mel, model, preset.n_frames, preset.hop_frames)
        correct += int(np.argmax(posterior) == clip.label)
    return correct / len(clips)


@dataclass
class SoftmaxTrace:
    """What softmax training did.

    Attrs:
        losses: The mean loss of every epoch.
        seen_clip_ids: The clips that training drew patches from.
    """
    losses: list[float]
    seen_clip_ids: set[str] = field(default_factory=set)


def train_classifier(
    graph: ModelGraph,
    clips: Sequence[Clip],
    opt: OptimizerConfig,
    epochs: int = 200,
    rng: np.random.Generator | int | None = None
) -> SoftmaxTrace:
    """Train a classifier graph with softmax cross-entropy.

    Every epoch draws one random patch per training clip and steps through
    them in shuffled batches of `opt.batch_size`.

    Args:
        graph: A graph with softmax outputs.
        clips: The training clips, repeat-padded to the patch width.
        opt: The optimizer settings.
        epochs: The fixed number of epochs.
        rng: The seed or generator of patch sampling and dropout.

    Returns:
        The epoch losses and the clip IDs of all sampled patches.
    """
    if graph.output_kind != "softmax":
        raise ArgumentError(f"Softmax training needs a classifier but got {graph.output_kind} outputs")
    if epochs < 1:
        raise ArgumentError(f"The number of epochs has to be positive but is {epochs}")
    if not clips:
        raise ArgumentError("Can't train on an empty list of clips")
    rng = make_rng(rng)
    n_frames = graph.input_shape[1]
    params = graph.parameters()
    losses = []
    seen = set()

    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(clips))
        patches = [
            sample_patch(clips[i].mel, n_frames, rng, label=clips[i].label, clip_id=clips[i].clip_id)
            for i in order
        ]
        seen.update(patch.clip_id for patch in patches)
        epoch_losses = []
        for start in range(0, len(patches), opt.batch_size):
            batch = patches[start:start + opt.batch_size]
            graph.zero_grad()
            logits = graph.forward(stack_patches(batch), mode="train", rng=rng)
            loss, _ = ops.softmax_xent(logits, [patch.label for patch in batch])
            loss.backward()
            sgd_step(params, opt)
            epoch_losses.append(loss.item())
        losses.append(float(np.mean(epoch_losses)))
        logger.debug(f"{graph.arch} epoch {epoch}/{epochs}: loss={losses[-1]:.6f}")

    graph.zero_grad()
    logger.info(f"Trained {graph.arch} on {len(clips)} clips for {epochs} epochs, final loss {losses[-1]:.4f}")
    return SoftmaxTrace(losses=losses, seen_clip_ids=seen)
