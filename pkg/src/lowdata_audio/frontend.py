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

"""Waveforms to mel patches, MFCC statistics and windowed predictions."""

from typing import Callable

import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import librosa
import numpy as np
import soundfile as sf
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct
from scipy.signal import get_window

from lowdata_audio.errors import ArgumentError
from lowdata_audio.models import Clip, FrontendPreset, MelPatch, StftConfig
from lowdata_audio.ndgrad import ops
from lowdata_audio.ndgrad.tensor import Parameter, Tensor


logger = logging.getLogger(__name__)


# Maps one spectrogram window to a class posterior
ClassifierFn = Callable[[np.ndarray], np.ndarray]

MEL128 = FrontendPreset(
    id="mel128",
    stft=StftConfig(window_size=1024, hop_size=1024, sample_rate=44100),
    n_mels=128,
    n_frames=128,
    hop_frames=43,
)
MEL64 = FrontendPreset(
    id="mel64",
    stft=StftConfig(window_size=400, hop_size=160, sample_rate=16000),
    n_mels=64,
    n_frames=96,
    hop_frames=96,
)
PRESETS = {preset.id: preset for preset in (MEL128, MEL64)}

LOG_EPSILON = 1e-10
MFCC_COEFFS = 20
MFCC_MEL_BANDS = 40
DELTA_WIDTH = 9
COMPRESSIONS = ("log_eps", "log_learn", "fixed")


def get_preset(preset_id: str) -> FrontendPreset:
    """Find a frontend preset by its ID."""
    if preset_id not in PRESETS:
        raise ArgumentError(f"Unknown frontend preset '{preset_id}', expected one of {list(PRESETS)}")
    return PRESETS[preset_id]


@dataclass(eq=False)
class LogCompression:
    """The compression f(X) = log(alpha * X + beta) of mel energies.

    'log_eps' fixes (alpha, beta) = (1, epsilon), 'fixed' uses any given
    positive pair and 'log_learn' learns alpha = exp(pre_alpha) and
    beta = softplus(pre_beta).

    Attrs:
        kind: One of 'log_eps', 'log_learn' or 'fixed'.
        epsilon: The offset of 'log_eps'.
        pre_alpha: The pre-gate alpha of 'log_learn'.
        pre_beta: The pre-gate beta of 'log_learn'.
        fixed_alpha: The alpha of 'fixed'.
        fixed_beta: The beta of 'fixed'.
    """
    kind: str = "log_eps"
    epsilon: float = LOG_EPSILON
    pre_alpha: Parameter | None = None
    pre_beta: Parameter | None = None
    fixed_alpha: float = 1.0
    fixed_beta: float = 1.0
    _params: list[Parameter] = field(default_factory=list, repr=False)

    def __post_init__(self) -> None:
        if self.kind not in COMPRESSIONS:
            raise ArgumentError(f"Unknown compression '{self.kind}', expected one of {COMPRESSIONS}")
        if self.kind == "log_learn":
            if self.pre_alpha is None or self.pre_beta is None:
                raise ArgumentError("log_learn requires pre_alpha and pre_beta parameters")
            self._params = [self.pre_alpha, self.pre_beta]
        elif self.kind == "log_eps" and self.epsilon <= 0:
            raise ArgumentError(f"Epsilon has to be positive but is {self.epsilon}")
        elif self.kind == "fixed" and (self.fixed_alpha <= 0 or self.fixed_beta <= 0):
            raise ArgumentError(f"Expected positive (alpha, beta) but got {(self.fixed_alpha, self.fixed_beta)}")

    @classmethod
    def log_eps(cls, epsilon: float = LOG_EPSILON) -> "LogCompression":
        return cls(kind="log_eps", epsilon=epsilon)

    @classmethod
    def log_learn(cls, pre_alpha: float = 7.0, pre_beta: float = 1.0) -> "LogCompression":
        return cls(
            kind="log_learn",
            pre_alpha=Parameter.from_array(np.array([pre_alpha]), name="compress/pre_alpha"),
            pre_beta=Parameter.from_array(np.array([pre_beta]), name="compress/pre_beta"),
        )

    @classmethod
    def fixed(cls, alpha: float, beta: float) -> "LogCompression":
        return cls(kind="fixed", fixed_alpha=alpha, fixed_beta=beta)

    @classmethod
    def from_name(cls, name: str) -> "LogCompression":
        """Build a compression from a CLI name like 'log-eps' or 'log-learn'."""
        kind = name.replace("-", "_")
        if kind == "log_eps":
            return cls.log_eps()
        if kind == "log_learn":
            return cls.log_learn()
        raise ArgumentError(f"Unknown compression '{name}', expected 'log-eps' or 'log-learn'")

    @property
    def alpha(self) -> float:
        if self.kind == "log_learn":
            return float(np.exp(self.pre_alpha.data[0]))
        return 1.0 if self.kind == "log_eps" else self.fixed_alpha

    @property
    def beta(self) -> float:
        if self.kind == "log_learn":
            return float(np.logaddexp(0.0, self.pre_beta.data[0]))
        return self.epsilon if self.kind == "log_eps" else self.fixed_beta

    def parameters(self) -> list[Parameter]:
        return list(self._params)


def stft_power(wave: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Hann-windowed power spectrogram without centering.

    Args:
        wave: A mono waveform.
        cfg: The STFT setting.

    Returns:
        An array of shape (window_size // 2 + 1, frames) where
        frames = (len(wave) - window_size) // hop_size + 1.

    Raises:
        ArgumentError: The waveform is shorter than one window.
    """
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise ArgumentError(f"Expected a mono waveform but got shape {wave.shape}")
    if wave.shape[0] < cfg.window_size:
        raise ArgumentError(
            f"Waveform of {wave.shape[0]} samples is shorter than the window of {cfg.window_size}, repeat-pad it first"
        )
    window = get_window("hann", cfg.window_size, fftbins=True)
    frames = sliding_window_view(wave, cfg.window_size)[::cfg.hop_size]
    spectrum = np.fft.rfft(frames * window, axis=1)
    return np.ascontiguousarray((spectrum.real ** 2 + spectrum.imag ** 2).T)


@lru_cache(maxsize=16)
def mel_filterbank(n_mels: int, window_size: int, sample_rate: int) -> np.ndarray:
    """Triangular HTK mel filters spanning 0 Hz to the Nyquist frequency.

    Filters too narrow to contain an FFT bin get a unit weight at the bin
    closest to their center.

    Returns:
        A read-only (n_mels, window_size // 2 + 1) weight matrix.
    """
    n_bins = window_size // 2 + 1
    if n_mels < 1:
        raise ArgumentError(f"The number of mel bands has to be positive but is {n_mels}")
    if n_mels > n_bins:
        raise ArgumentError(f"{n_mels} mel bands exceed the {n_bins} frequency bins")
    with warnings.catch_warnings():
        # librosa warns about the empty filters that are filled in below
        warnings.simplefilter("ignore", UserWarning)
        weights = librosa.filters.mel(
            sr=sample_rate,
            n_fft=window_size,
            n_mels=n_mels,
            fmin=0.0,
            fmax=sample_rate / 2.0,
            htk=True,
            norm=None,
            dtype=np.float64,
        )

    empty = np.flatnonzero(weights.sum(axis=1) == 0)
    if empty.size:
        centers = librosa.mel_frequencies(n_mels=n_mels + 2, fmin=0.0, fmax=sample_rate / 2.0, htk=True)[1:-1]
        fft_freqs = librosa.fft_frequencies(sr=sample_rate, n_fft=window_size)
        nearest = np.abs(fft_freqs[None, :] - centers[empty, None]).argmin(axis=1)
        weights[empty, nearest] = 1.0
        logger.debug(f"{empty.size} of {n_mels} mel filters hold no FFT bin, using their nearest bin")
    weights.setflags(write=False)
    return weights


def mel_project(power: np.ndarray, n_mels: int, cfg: StftConfig) -> np.ndarray:
    """Project a power spectrogram onto `n_mels` mel bands."""
    power = np.asarray(power, dtype=np.float64)
    if power.shape[0] != cfg.freq_bins:
        raise ArgumentError(f"Spectrogram with {power.shape[0]} bins doesn't match {cfg}")
    return mel_filterbank(n_mels, cfg.window_size, cfg.sample_rate) @ power


def compress(mel: np.ndarray | Tensor, c: LogCompression) -> Tensor:
    """Apply log(alpha * X + beta) elementwise.

    Gradients reach the pre-gate parameters of a 'log_learn' compression.

    Raises:
        ArgumentError: The mel energies hold negative values.
    """
    x = mel if isinstance(mel, Tensor) else Tensor(mel)
    if np.any(x.data < 0):
        raise ArgumentError("Mel energies have to be non-negative")
    if c.kind == "log_learn":
        alpha = ops.exp(c.pre_alpha)
        beta = ops.softplus(c.pre_beta)
    else:
        alpha, beta = Tensor(np.array([c.alpha])), Tensor(np.array([c.beta]))
    return ops.log(ops.add(ops.mul(x, alpha), beta))


def repeat_pad(spec: np.ndarray, target_frames: int) -> np.ndarray:
    """Tile a spectrogram along time until it has `target_frames` frames.

    Output column j equals input column j mod frames. Spectrograms that are
    already wide enough are returned unchanged.

    Raises:
        ArgumentError: The spectrogram has no frames.
    """
    spec = np.asarray(spec, dtype=np.float64)
    frames = spec.shape[1] if spec.ndim == 2 else 0
    if frames == 0:
        raise ArgumentError(f"Can't repeat-pad an empty spectrogram of shape {spec.shape}")
    if frames >= target_frames:
        return spec
    return np.ascontiguousarray(spec[:, np.arange(target_frames) % frames])


def sample_patch(
    spec: np.ndarray,
    target_frames: int,
    rng: np.random.Generator,
    label: int = 0,
    clip_id: str = ""
) -> MelPatch:
    """Cut a uniformly random window of `target_frames` frames.

    Raises:
        ArgumentError: The spectrogram is narrower than the window.
    """
    frames = spec.shape[1]
    if frames < target_frames:
        raise ArgumentError(f"Spectrogram of {frames} frames is narrower than {target_frames}, repeat-pad it first")
    offset = int(rng.integers(0, frames - target_frames + 1))
    return MelPatch(
        values=spec[:, offset:offset + target_frames],
        label=label,
        clip_id=clip_id,
        offset_frames=offset,
    )


def window_starts(frames: int, window_frames: int, hop_frames: int) -> range:
    if frames < window_frames:
        raise ArgumentError(f"Spectrogram of {frames} frames is narrower than the window of {window_frames}")
    return range(0, frames - window_frames + 1, hop_frames)


def windowed_predict(
    spec: np.ndarray,
    model: ClassifierFn,
    window_frames: int,
    hop_frames: int
) -> np.ndarray:
    """Average the posteriors of a moving window over a spectrogram.

    Args:
        spec: A (bins, frames) spectrogram with at least `window_frames` frames.
        model: Maps one (bins, window_frames) window to a class posterior.
        window_frames: The window width.
        hop_frames: The window hop.

    Returns:
        The arithmetic mean of the window posteriors.
    """
    posteriors = [
        np.asarray(model(spec[:, start:start + window_frames]), dtype=np.float64)
        for start in window_starts(spec.shape[1], window_frames, hop_frames)
    ]
    return np.mean(posteriors, axis=0)


def deltas(features: np.ndarray, width: int = DELTA_WIDTH) -> np.ndarray:
    """Linear-regression deltas over `width` frames with edge replication."""
    return librosa.feature.delta(np.asarray(features, dtype=np.float64), width=width, order=1, axis=-1, mode="nearest")


def mfcc_from_power(power: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Summarize a power spectrogram into 120 MFCC statistics.

    20 MFCCs from 40 mel bands plus their deltas and delta-deltas give 60
    values per frame; their means and standard deviations over time are
    concatenated.

    Raises:
        ArgumentError: Fewer frames than the delta window.
    """
    if power.shape[1] < DELTA_WIDTH:
        raise ArgumentError(f"MFCC statistics need at least {DELTA_WIDTH} frames but got {power.shape[1]}")
    log_mel = np.log(mel_project(power, MFCC_MEL_BANDS, cfg) + LOG_EPSILON)
    coeffs = dct(log_mel, type=2, axis=0, norm="ortho")[:MFCC_COEFFS]
    first = deltas(coeffs)
    features = np.vstack([coeffs, first, deltas(first)])
    return np.concatenate([features.mean(axis=1), features.std(axis=1)])


def mfcc_vector(wave: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Return the 120-dimensional MFCC statistics of a waveform."""
    return mfcc_from_power(stft_power(wave, cfg), cfg)


def load_wave(path: str, sample_rate: int) -> np.ndarray:
    """Read an audio file as mono float64 at `sample_rate`.

    Integer PCM is scaled to [-1, 1), channels are averaged and other sample
    rates are resampled.
    """
    data, rate = sf.read(path, dtype="float64", always_2d=True)
    wave = librosa.to_mono(data.T)
    if rate != sample_rate:
        wave = librosa.resample(wave, orig_sr=rate, target_sr=sample_rate)
    return np.asarray(wave, dtype=np.float64)


def write_wave(path: str, wave: np.ndarray, sample_rate: int) -> None:
    """Write a mono waveform as 16-bit PCM WAV."""
    pcm = np.clip(np.round(np.asarray(wave) * 32767.0), -32768, 32767).astype(np.int16)
    sf.write(path, pcm, sample_rate, subtype="PCM_16", format="WAV")


def clip_mel(wave: np.ndarray, preset: FrontendPreset) -> np.ndarray:
    """Turn a whole clip into its mel power spectrogram, repeat-padded to a patch.

    A spectrogram one frame wider than the patch keeps its first
    `preset.n_frames` frames, so 3 s clips at 44.1 kHz give exactly one
    128 x 128 patch.
    """
    wave = np.asarray(wave, dtype=np.float64)
    if wave.shape[0] == 0:
        raise ArgumentError("Can't analyse an empty waveform")
    if wave.shape[0] < preset.stft.window_size:
        wave = np.resize(wave, preset.stft.window_size)
    mel = mel_project(stft_power(wave, preset.stft), preset.n_mels, preset.stft)
    if mel.shape[1] == preset.n_frames + 1:
        mel = mel[:, :preset.n_frames]
    return repeat_pad(mel, preset.n_frames)


def load_clip(path: str, clip_id: str, label: int, preset: FrontendPreset) -> Clip:
    wave = load_wave(path, preset.stft.sample_rate)
    return Clip(clip_id=clip_id, label=label, mel=clip_mel(wave, preset))
