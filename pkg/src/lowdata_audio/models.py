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

from dataclasses import dataclass

import numpy as np

from lowdata_audio.errors import ArgumentError, DimensionError, NonFiniteError


# (bins, frames) of the two input formats
PATCH_SHAPES = ((128, 128), (64, 96))


@dataclass(frozen=True)
class StftConfig:
    """An STFT analysis setting.

    Attrs:
        window_size: The analysis window length in samples.
        hop_size: The hop between two frames in samples.
        sample_rate: The sample rate in Hz the waveform is expected in.
    """
    window_size: int
    hop_size: int
    sample_rate: int

    def __post_init__(self) -> None:
        if not self.window_size >= self.hop_size >= 1:
            raise ArgumentError(
                f"Expected window_size >= hop_size >= 1 but got {self.window_size=}, {self.hop_size=}"
            )
        if self.sample_rate <= 0:
            raise ArgumentError(f"The sample rate has to be positive but is {self.sample_rate=}")

    @property
    def freq_bins(self) -> int:
        return self.window_size // 2 + 1

    @property
    def frames_per_second(self) -> float:
        return self.sample_rate / self.hop_size


@dataclass(frozen=True)
class FrontendPreset:
    """An input format of the models.

    Attrs:
        id: The preset name stored in checkpoints and plans.
        stft: The STFT analysis setting.
        n_mels: The number of mel bands of a patch.
        n_frames: The number of frames of a patch.
        hop_frames: The hop of the prediction window in frames.
    """
    id: str
    stft: StftConfig
    n_mels: int
    n_frames: int
    hop_frames: int

    def __post_init__(self) -> None:
        if (self.n_mels, self.n_frames) not in PATCH_SHAPES:
            raise ArgumentError(
                f"Unsupported patch geometry {(self.n_mels, self.n_frames)}, expected one of {PATCH_SHAPES}"
            )


@dataclass
class MelPatch:
    """A fixed-size mel spectrogram patch.

    The values are mel power values; the logarithmic compression is
    applied by the first layer of a model.

    Attrs:
        values: The patch with shape (n_bins, n_frames).
        label: The class index of the source clip.
        clip_id: The ID of the source clip.
        offset_frames: The first frame of the patch in the source spectrogram.
    """
    values: np.ndarray
    label: int
    clip_id: str
    offset_frames: int = 0

    def __post_init__(self) -> None:
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape not in PATCH_SHAPES:
            raise DimensionError(
                f"A patch has to be one of {PATCH_SHAPES} but has shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteError(f"Patch of clip '{self.clip_id}' holds non-finite values")

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class Clip:
    """A labelled clip turned into its (repeat-padded) mel spectrogram.

    Attrs:
        clip_id: The clip ID of the manifest.
        label: The class index.
        mel: The mel power spectrogram with shape (n_bins, frames).
    """
    clip_id: str
    label: int
    mel: np.ndarray
