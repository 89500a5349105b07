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

from typing import Iterable, Sequence

import logging
from dataclasses import dataclass

import numpy as np

from lowdata_audio.errors import ArgumentError, StateError
from lowdata_audio.ndgrad.tensor import Parameter


logger = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    """Settings of the clipped SGD optimizer.

    Attrs:
        base_lr: The learning rate of the 'fast' parameter group.
        slow_lr: The learning rate of the 'slow' (pre-trained) group.
        clip_norm: The threshold of the global gradient norm.
        batch_size: The number of patches per step.
    """
    base_lr: float = 0.1
    slow_lr: float = 0.00001
    clip_norm: float = 5.0
    batch_size: int = 256

    def __post_init__(self) -> None:
        if self.base_lr <= 0:
            raise ArgumentError(f"The base learning rate has to be positive but is {self.base_lr}")
        # A zero slow rate freezes pre-trained layers
        if self.slow_lr < 0:
            raise ArgumentError(f"The slow learning rate can't be negative but is {self.slow_lr}")
        if self.clip_norm <= 0:
            raise ArgumentError(f"The clipping threshold has to be positive but is {self.clip_norm}")
        if self.batch_size < 1:
            raise ArgumentError(f"The batch size has to be positive but is {self.batch_size}")

    def rate(self, group: str) -> float:
        return self.slow_lr if group == "slow" else self.base_lr


def global_norm(grads: Iterable[np.ndarray]) -> float:
    """Return the L2 norm of the concatenation of all gradients."""
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def zero_grad(params: Iterable[Parameter]) -> None:
    for param in params:
        param.tensor.zero_grad()


def sgd_step(params: Sequence[Parameter], config: OptimizerConfig) -> None:
    """Update parameters with weight decay, global norm clipping and SGD.

    The weight decay is added to each gradient, then all gradients are
    jointly rescaled so their global norm doesn't exceed `clip_norm` and
    finally every parameter moves by the rate of its group. The clipped
    gradients are written back to the parameters.

    Args:
        params: The parameters to update.
        config: The optimizer settings.

    Raises:
        StateError: A parameter has no gradient.
    """
    grads = []
    for param in params:
        if param.grad is None:
            raise StateError(f"Parameter '{param.name}' has no gradient, run backward first")
        grad = param.grad
        if param.weight_decay > 0:
            grad = grad + param.weight_decay * param.data
        grads.append(grad)

    norm = global_norm(grads)
    scale = config.clip_norm / norm if norm > config.clip_norm else 1.0
    logger.debug(f"SGD step over {len(grads)} parameters: {norm=:.6f}, {scale=:.6f}")

    for param, grad in zip(params, grads):
        grad = grad * scale
        param.tensor.grad = grad
        param.data = param.data - config.rate(param.group) * grad
