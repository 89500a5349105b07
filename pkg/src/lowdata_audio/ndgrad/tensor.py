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

from typing import Callable, Optional, Sequence

from dataclasses import dataclass

import numpy as np

from lowdata_audio.errors import ArgumentError, DimensionError, NonFiniteError


# Maps the gradient of an output to the gradients of its parents
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

PARAMETER_GROUPS = ("fast", "slow")


class Tensor:
    """A dense float64 array with an optional gradient slot.

    Tensors created by operations remember their parents and a backward
    function, so calling `backward` on a scalar result accumulates
    gradients into every leaf that requires them.

    Attrs:
        data: The values (C-contiguous float64).
        grad: The accumulated gradient of the same shape or `None`.
        requires_grad: Whether gradients are tracked for this tensor.
    """

    def __init__(
        self,
        data: np.ndarray | float | Sequence,
        requires_grad: bool = False,
        parents: Sequence["Tensor"] = (),
        backward_fn: BackwardFn | None = None,
        name: str | None = None
    ) -> None:
        array = np.ascontiguousarray(data, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(f"Tensor{' ' + name if name else ''} of shape {array.shape} holds NaN or Inf")
        self.data = array
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = tuple(parents)
        self._backward_fn = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ArgumentError(f"Only single-element tensors convert to floats, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate(self, grad: np.ndarray) -> None:
        """Add a gradient contribution to this tensor."""
        if grad.shape != self.data.shape:
            raise DimensionError(
                f"Gradient of shape {grad.shape} doesn't match tensor of shape {self.data.shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"Gradient of shape {grad.shape} holds NaN or Inf")
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad = self.grad + grad

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Run reverse-mode differentiation from this tensor.

        Args:
            grad: The gradient w.r.t. this tensor. Defaults to ones for
                single-element tensors (losses).

        Raises:
            ArgumentError: No gradient was given for a non-scalar tensor.
        """
        if grad is None:
            if self.size != 1:
                raise ArgumentError(
                    f"An initial gradient is required for a tensor of shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        self.accumulate(np.asarray(grad, dtype=np.float64))

        for node in reversed(self._topological_order()):
            if node._backward_fn is None or node.grad is None:
                continue
            parent_grads = node._backward_fn(node.grad)
            for parent, parent_grad in zip(node._parents, parent_grads):
                if parent_grad is not None and parent.requires_grad:
                    parent.accumulate(parent_grad)

    def _topological_order(self) -> list["Tensor"]:
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value: "Tensor | np.ndarray | float") -> Tensor:
    """Wrap arrays into constant tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def from_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Create the result of an operation, tracking the graph only if needed."""
    if any(parent.requires_grad for parent in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


@dataclass(eq=False)
class Parameter:
    """A trainable tensor.

    Attrs:
        tensor: The parameter values and gradient.
        group: The learning rate group, either 'fast' or 'slow'.
        weight_decay: The L2 penalty factor added to the gradient.
        name: A unique name within a model (e.g. 'conv1/kernel').
    """
    tensor: Tensor
    group: str = "fast"
    weight_decay: float = 0.0
    name: str = ""

    def __post_init__(self) -> None:
        if self.group not in PARAMETER_GROUPS:
            raise ArgumentError(f"Unknown learning rate group '{self.group}', expected one of {PARAMETER_GROUPS}")
        if self.weight_decay < 0:
            raise ArgumentError(f"Weight decay has to be non-negative but is {self.weight_decay}")
        self.tensor.requires_grad = True

    @classmethod
    def from_array(cls, array: np.ndarray, **kwargs) -> "Parameter":
        return cls(Tensor(np.array(array, dtype=np.float64), requires_grad=True), **kwargs)

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value: np.ndarray) -> None:
        self.tensor.data = np.ascontiguousarray(value, dtype=np.float64)

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    @property
    def size(self) -> int:
        return self.tensor.size


@dataclass(eq=False)
class RunningStats:
    """Running per-channel statistics of a batch norm layer."""
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.9

    @classmethod
    def init(cls, channels: int, momentum: float = 0.9) -> "RunningStats":
        return cls(mean=np.zeros(channels), var=np.ones(channels), momentum=momentum)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        self.mean = self.momentum * self.mean + (1.0 - self.momentum) * batch_mean
        self.var = self.momentum * self.var + (1.0 - self.momentum) * batch_var
