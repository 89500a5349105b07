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

from typing import Callable

import numpy as np
import pytest

from lowdata_audio.labctl.synth import synth_dataset
from lowdata_audio.models import Clip


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function w.r.t. an array it reads in place."""
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + h
        upper = f()
        x[index] = original - h
        lower = f()
        x[index] = original
        grad[index] = (upper - lower) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / scale)


def random_clips(rng: np.random.Generator, n_classes: int, per_class: int, bins: int = 128, frames: int = 150) -> list[Clip]:
    """Clips of random non-negative mel power with a class-dependent offset."""
    return [
        Clip(clip_id=f"k{k}_{i}", label=k, mel=rng.random((bins, frames)) + k)
        for k in range(n_classes)
        for i in range(per_class)
    ]


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Three classes of six synthetic clips in three folds."""
    out = tmp_path_factory.mktemp("tiny")
    manifest = synth_dataset(str(out), n_classes=3, clips_per_class=6, seed=7)
    return out, manifest
