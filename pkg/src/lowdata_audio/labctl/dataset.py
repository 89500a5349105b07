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

"""Dataset manifests, fold contexts and clip loading."""

from typing import Sequence

import os
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import pandas as pd

from lowdata_audio.errors import ArgumentError, DataError, FormatError
from lowdata_audio.frontend import clip_mel, get_preset, load_wave
from lowdata_audio.models import Clip, FrontendPreset


logger = logging.getLogger(__name__)


LAYOUTS = ("folded", "split")
SPLIT_FOLDS = ("train", "eval")
MANIFEST_COLUMNS = ["clip_id", "path", "label", "fold", "duration"]


@dataclass(frozen=True)
class ManifestEntry:
    """One clip of a dataset.

    Attrs:
        clip_id: A unique clip ID.
        path: The audio file path.
        label: The class name.
        fold: '1', '2', ... for folded datasets and 'train' or 'eval' for
            split datasets.
        duration: The clip duration in seconds.
    """
    clip_id: str
    path: str
    label: str
    fold: str
    duration: float


@dataclass
class DatasetManifest:
    """The clips, classes and folds of a dataset.

    Attrs:
        entries: The clips.
        class_names: The ordered class names; the class index of a clip is
            the position of its label.
        layout: 'folded' for cross-validation folds, 'split' for a fixed
            train/eval split.
    """
    entries: list[ManifestEntry]
    class_names: list[str] = field(default_factory=list)
    layout: str = "folded"

    def __post_init__(self) -> None:
        if not self.class_names:
            self.class_names = sorted({entry.label for entry in self.entries})
        if self.layout not in LAYOUTS:
            raise ArgumentError(f"Unknown layout '{self.layout}', expected one of {LAYOUTS}")

        seen = set()
        known = set(self.class_names)
        for entry in self.entries:
            if entry.clip_id in seen:
                raise DataError(f"Duplicate clip ID '{entry.clip_id}'")
            seen.add(entry.clip_id)
            if entry.label not in known:
                raise DataError(f"Clip '{entry.clip_id}' has unknown label '{entry.label}'")
            if self.layout == "split" and entry.fold not in SPLIT_FOLDS:
                raise DataError(f"Clip '{entry.clip_id}' has fold '{entry.fold}' but split layouts use {SPLIT_FOLDS}")
            if self.layout == "folded" and not (entry.fold.isdigit() and int(entry.fold) >= 1):
                raise DataError(f"Clip '{entry.clip_id}' has fold '{entry.fold}' but folded layouts use 1, 2, ...")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def folds(self) -> list[str]:
        if self.layout == "split":
            return list(SPLIT_FOLDS)
        return sorted({entry.fold for entry in self.entries}, key=int)

    def label_index(self, label: str) -> int:
        return self.class_names.index(label)

    def fold_contexts(self) -> list["FoldContext"]:
        """Return the train/eval partitions of the experiment protocol.

        Folded datasets hold out every fold once; split datasets have a
        single context.
        """
        if self.layout == "split":
            return [
                FoldContext(
                    name="eval",
                    train=[e for e in self.entries if e.fold == "train"],
                    eval=[e for e in self.entries if e.fold == "eval"],
                )
            ]
        return [
            FoldContext(
                name=fold,
                train=[e for e in self.entries if e.fold != fold],
                eval=[e for e in self.entries if e.fold == fold],
            )
            for fold in self.folds
        ]


@dataclass
class FoldContext:
    """The train and evaluation clips of one fold.

    Attrs:
        name: The held-out fold.
        train: The clips training may draw from.
        eval: The held-out clips.
    """
    name: str
    train: list[ManifestEntry]
    eval: list[ManifestEntry]

    @property
    def eval_ids(self) -> set[str]:
        return {entry.clip_id for entry in self.eval}


def read_manifest(path: str, class_names: Sequence[str] | None = None) -> DatasetManifest:
    """Read a manifest CSV with the columns clip_id, path, label, fold and duration.

    Relative audio paths are resolved against the manifest directory. The
    layout is 'split' if all folds are 'train' or 'eval'.

    Raises:
        FormatError: A column is missing.
    """
    frame = pd.read_csv(path, dtype={"clip_id": str, "path": str, "label": str, "fold": str})
    missing = [column for column in MANIFEST_COLUMNS if column not in frame.columns]
    if missing:
        raise FormatError(f"Manifest '{path}' lacks the columns {missing}")

    root = os.path.dirname(os.path.abspath(path))
    entries = [
        ManifestEntry(
            clip_id=row.clip_id,
            path=row.path if os.path.isabs(row.path) else os.path.normpath(os.path.join(root, row.path)),
            label=row.label,
            fold=row.fold,
            duration=float(row.duration),
        )
        for row in frame.itertuples(index=False)
    ]
    layout = "split" if set(frame["fold"]) <= set(SPLIT_FOLDS) else "folded"
    manifest = DatasetManifest(entries=entries, class_names=list(class_names or []), layout=layout)
    logger.info(f"Read a {layout} manifest of {len(entries)} clips and {manifest.n_classes} classes from '{path}'")
    return manifest


def write_manifest(manifest: DatasetManifest, path: str) -> None:
    """Write a manifest CSV, storing audio paths relative to its directory."""
    root = os.path.dirname(os.path.abspath(path))
    frame = pd.DataFrame(
        [
            {
                "clip_id": entry.clip_id,
                "path": os.path.relpath(entry.path, root) if os.path.isabs(entry.path) else entry.path,
                "label": entry.label,
                "fold": entry.fold,
                "duration": entry.duration,
            }
            for entry in manifest.entries
        ],
        columns=MANIFEST_COLUMNS,
    )
    frame.to_csv(path, index=False, float_format="%.17g")


def from_urbansound8k(metadata_csv: str, audio_root: str) -> DatasetManifest:
    """Build a folded manifest from the UrbanSound8K metadata CSV.

    Audio files are expected at `<audio_root>/fold<k>/<slice_file_name>`.
    """
    frame = pd.read_csv(metadata_csv)
    entries = [
        ManifestEntry(
            clip_id=os.path.splitext(row.slice_file_name)[0],
            path=os.path.join(audio_root, f"fold{int(row.fold)}", row.slice_file_name),
            label=str(row["class"]),
            fold=str(int(row.fold)),
            duration=float(row.end - row.start),
        )
        for _, row in frame.iterrows()
    ]
    return DatasetManifest(entries=entries, layout="folded")


def _tut_entries(meta_path: str, audio_root: str, fold: str) -> list[ManifestEntry]:
    frame = pd.read_csv(meta_path, sep="\t", header=None)
    return [
        ManifestEntry(
            clip_id=os.path.splitext(os.path.basename(str(row[0])))[0],
            path=os.path.join(audio_root, str(row[0])),
            label=str(row[1]),
            fold=fold,
            duration=10.0,
        )
        for row in frame.itertuples(index=False)
    ]


def from_tut(train_meta: str, eval_meta: str, audio_root: str) -> DatasetManifest:
    """Build a split manifest from tab-separated ASC-TUT file lists.

    Every line holds a path relative to `audio_root` and a scene label.
    """
    entries = _tut_entries(train_meta, audio_root, "train") + _tut_entries(eval_meta, audio_root, "eval")
    return DatasetManifest(entries=entries, layout="split")


@lru_cache(maxsize=4096)
def cached_wave(path: str, sample_rate: int) -> np.ndarray:
    wave = load_wave(path, sample_rate)
    wave.setflags(write=False)
    return wave


@lru_cache(maxsize=4096)
def cached_mel(path: str, preset_id: str) -> np.ndarray:
    preset = get_preset(preset_id)
    mel = clip_mel(cached_wave(path, preset.stft.sample_rate), preset)
    mel.setflags(write=False)
    return mel


def load_clips(manifest: DatasetManifest, entries: Sequence[ManifestEntry], preset: FrontendPreset) -> list[Clip]:
    """Turn manifest entries into repeat-padded mel spectrogram clips."""
    return [
        Clip(clip_id=entry.clip_id, label=manifest.label_index(entry.label), mel=cached_mel(entry.path, preset.id))
        for entry in entries
    ]
