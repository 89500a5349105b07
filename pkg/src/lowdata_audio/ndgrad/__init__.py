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

"""A small dense-tensor core with reverse-mode gradients."""

from lowdata_audio.ndgrad.tensor import (
    Parameter,
    RunningStats,
    Tensor,
    as_tensor
)
from lowdata_audio.ndgrad.optim import (
    OptimizerConfig,
    global_norm,
    sgd_step,
    zero_grad
)
from lowdata_audio.ndgrad import ops
