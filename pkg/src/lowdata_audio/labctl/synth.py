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

"""A synthetic sound classification dataset with separable timbres."""

import os
import logging
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, lfilter

from lowdata_audio.errors import ArgumentError
from lowdata_audio.frontend import write_wave
from lowdata_audio.labctl.dataset import DatasetManifest, ManifestEntry, write_manifest
from lowdata_audio.utils import derive_seed


logger = logging.getLogger(__name__)


SAMPLE_RATE = 44100
N_FOLDS = 3
N_PARTIALS = 8
FADE_SECONDS = 0.01


@dataclass(frozen=True)
class TimbreRecipe:
    """How the clips of one class sound.

    Attrs:
        f0: The nominal fundamental frequency in Hz.
        partials: The relative amplitudes of the harmonics.
        noise_band: The (low, high) band of the filtered noise in Hz.
        noise_level: The noise amplitude relative to the harmonics.
    """
    f0: float
    partials: np.ndarray
    noise_band: tuple[float, float]
    noise_level: float


def class_recipes(n_classes: int, seed: int) -> list[TimbreRecipe]:
    """Give every class its own pitch range, partial profile and noise band."""
    f0s = np.geomspace(110.0, 880.0, n_classes)
    centers = np.geomspace(400.0, 8000.0, n_classes)
    recipes = []
    for k in range(n_classes):
        rng = np.random.default_rng(derive_seed(seed, k))
        partials = rng.uniform(0.05, 1.0, N_PARTIALS) / np.arange(1, N_PARTIALS + 1) ** rng.uniform(0.0, 1.5)
        recipes.append(
            TimbreRecipe(
                f0=float(f0s[k]),
                partials=partials / partials.max(),
                noise_band=(float(centers[k] / 1.26), float(centers[k] * 1.26)),
                noise_level=float(rng.uniform(0.05, 0.3)),
            )
        )
    return recipes


def render_clip(recipe: TimbreRecipe, duration: float, rng: np.random.Generator, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Render one clip with a jittered pitch and a random gain."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = recipe.f0 * rng.uniform(0.97, 1.03)
    phases = rng.uniform(0.0, 2.0 * np.pi, N_PARTIALS)
    wave = np.zeros(n)
    for h, (amplitude, phase) in enumerate(zip(recipe.partials, phases), start=1):
        if h * f0 < sample_rate / 2:
            wave += amplitude * np.sin(2.0 * np.pi * h * f0 * t + phase)

    low, high = recipe.noise_band
    b, a = butter(2, [low, min(high, 0.45 * sample_rate)], btype="bandpass", fs=sample_rate)
    noise = lfilter(b, a, rng.standard_normal(n))
    wave += recipe.noise_level * noise / max(np.abs(noise).max(), 1e-12) * np.abs(wave).max()

    fade = min(int(FADE_SECONDS * sample_rate), n // 2)
    if fade:
        ramp = np.linspace(0.0, 1.0, fade)
        wave[:fade] *= ramp
        wave[-fade:] *= ramp[::-1]
    return rng.uniform(0.3, 0.9) * wave / max(np.abs(wave).max(), 1e-12)


def synth_dataset(
    out_dir: str,
    n_classes: int,
    clips_per_class: int,
    seed: int = 0,
    layout: str = "folded",
    sample_rate: int = SAMPLE_RATE
) -> DatasetManifest:
    """Write a synthetic dataset of 16-bit WAV files and its manifest.

    Clips last 1 to 4 seconds and the first clip of every class is shorter
    than 3 seconds. Folded datasets assign clip i of a class to fold
    i % 3 + 1; split datasets hold out every third clip for evaluation.

    Args:
        out_dir: The output directory; audio goes to `<out_dir>/audio`.
        n_classes: The number of classes.
        clips_per_class: The number of clips per class.
        seed: The seed of all randomness.
        layout: 'folded' or 'split'.
        sample_rate: The sample rate of the WAV files.

    Returns:
        The manifest, also written to `<out_dir>/manifest.csv`.
    """
    if n_classes < 2:
        raise ArgumentError(f"A dataset needs at least 2 classes but got {n_classes}")
    if clips_per_class < 1:
        raise ArgumentError(f"Every class needs at least one clip but got {clips_per_class}")
    if layout not in ("folded", "split"):
        raise ArgumentError(f"Unknown layout '{layout}'")

    audio_dir = os.path.join(out_dir, "audio")
    os.makedirs(audio_dir, exist_ok=True)
    entries = []
    for k, recipe in enumerate(class_recipes(n_classes, seed)):
        for i in range(clips_per_class):
            rng = np.random.default_rng(derive_seed(seed, k, i))
            duration = float(rng.uniform(1.0, 2.9) if i == 0 else rng.uniform(1.0, 4.0))
            clip_id = f"c{k:02d}_{i:03d}"
            path = os.path.join(audio_dir, f"{clip_id}.wav")
            write_wave(path, render_clip(recipe, duration, rng, sample_rate), sample_rate)
            if layout == "folded":
                fold = str(i % N_FOLDS + 1)
            else:
                fold = "eval" if i % N_FOLDS == 0 else "train"
            entries.append(
                ManifestEntry(clip_id=clip_id, path=path, label=f"class{k:02d}", fold=fold, duration=duration)
            )

    manifest = DatasetManifest(entries=entries, layout=layout)
    write_manifest(manifest, os.path.join(out_dir, "manifest.csv"))
    logger.info(f"Wrote {len(entries)} synthetic clips of {n_classes} classes to '{out_dir}'")
    return manifest
