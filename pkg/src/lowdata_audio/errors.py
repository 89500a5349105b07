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


class LowDataError(Exception):
    """Base class of all errors raised by this package."""


class DimensionError(LowDataError, ValueError):
    """Two shapes that have to agree don't."""


class ArgumentError(LowDataError, ValueError):
    """An argument is outside of its valid range."""


class NonFiniteError(LowDataError, ArithmeticError):
    """A tensor holds NaN or Inf values."""


class StateError(LowDataError, RuntimeError):
    """An object is used in a state that doesn't support the operation."""


class CheckpointError(LowDataError, ValueError):
    """A checkpoint doesn't match the expected architecture."""


class FormatError(LowDataError, ValueError):
    """A file is truncated or not in the expected format."""


class DataError(LowDataError, ValueError):
    """A dataset can't serve the requested experiment."""
