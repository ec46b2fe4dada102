"""Audio clips, WAV files, resampling, dataset folders and full-track separation."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from math import gcd
from pathlib import Path

import numpy as np

from .errors import DataError, DecodeError, UsageError
from .model import ModelConfig, ParameterSet, predict, receptive_margin

log = logging.getLogger(__name__)

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

SINGING_VOICE = ("vocals", "accompaniment")
MULTI_INSTRUMENT = ("bass", "drums", "other", "vocals")


@dataclass
class AudioClip:
    sample_rate: int
    samples: np.ndarray  # (frames, channels)

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2:
            raise ValueError(f"samples must be (frames, channels), got shape {s.shape}")
        self.samples = s

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    @property
    def frames(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return self.frames / self.sample_rate


# ---------------------------------------------------------------------------
# WAV


def read_wav(path) -> AudioClip:
    """Decode a RIFF/WAVE file holding 16-bit PCM or 32-bit float samples."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise DecodeError(f"{path}: not a RIFF/WAVE file (offset 0)")
    pos = 12
    fmt = None
    pcm = None
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4 : pos + 8])
        body = pos + 8
        if cid == b"fmt ":
            if size < 16 or body + size > len(data):
                raise DecodeError(f"{path}: malformed fmt chunk at offset {pos}")
            tag, channels, rate, _, align, bits = struct.unpack("<HHIIHH", data[body : body + 16])
            if tag == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise DecodeError(f"{path}: short extensible fmt chunk at offset {pos}")
                (tag,) = struct.unpack("<H", data[body + 24 : body + 26])
            fmt = (tag, channels, rate, align, bits)
        elif cid == b"data":
            if fmt is None:
                raise DecodeError(f"{path}: data chunk before fmt chunk at offset {pos}")
            if body + size > len(data):
                raise DecodeError(
                    f"{path}: data chunk at offset {pos} declares {size} bytes, "
                    f"only {len(data) - body} present"
                )
            pcm = data[body : body + size]
            break
        pos = body + size + (size & 1)
    if fmt is None:
        raise DecodeError(f"{path}: no fmt chunk found")
    if pcm is None:
        raise DecodeError(f"{path}: no data chunk found (scanned to offset {pos})")

    tag, channels, rate, align, bits = fmt
    if channels < 1:
        raise DecodeError(f"{path}: invalid channel count {channels}")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = "<i2", 1.0 / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = "<f4", None
    else:
        raise DecodeError(f"{path}: unsupported encoding (format tag {tag:#06x}, {bits} bits)")
    frame_bytes = channels * bits // 8
    if len(pcm) % frame_bytes:
        raise DecodeError(f"{path}: data length {len(pcm)} is not a multiple of the frame size {frame_bytes}")
    raw = np.frombuffer(pcm, dtype=dtype).reshape(-1, channels)
    if scale is None:
        samples = raw.astype(np.float32)
    else:
        samples = raw.astype(np.float32) * np.float32(scale)
    return AudioClip(rate, samples)


def encode_pcm16(samples: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1 - 2^-15], scale by 32768, round half away from zero."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0 - 2.0**-15) * 32768.0
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype("<i2")


def write_wav(clip: AudioClip, path, format: str = "pcm16") -> None:
    samples = np.asarray(clip.samples)
    if not np.all(np.isfinite(samples)):
        raise ValueError("write_wav: samples must be finite")
    channels = clip.channels
    if format == "pcm16":
        payload = encode_pcm16(samples).tobytes()
        tag, bits = WAVE_FORMAT_PCM, 16
    elif format == "float32":
        payload = samples.astype("<f4").tobytes()
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown WAV format {format!r}")
    align = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, clip.sample_rate, clip.sample_rate * align, align, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# ---------------------------------------------------------------------------
# resampling

RESAMPLE_HALF_TAPS = 64
RESAMPLE_BETA = 8.6
RESAMPLE_ROLLOFF = 0.9


def _resample_kernel(offsets: np.ndarray, cutoff: float, half_width: float) -> np.ndarray:
    """Kaiser-windowed sinc evaluated at ``offsets`` (in input samples).

    ``cutoff`` is in cycles per input sample.
    """
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * offsets)
    ratio = np.clip(offsets / half_width, -1.0, 1.0)
    window = np.i0(RESAMPLE_BETA * np.sqrt(1.0 - ratio * ratio)) / np.i0(RESAMPLE_BETA)
    return np.where(np.abs(offsets) <= half_width, h * window, 0.0)


def resample(clip: AudioClip, target_rate: int, chunk: int = 8192) -> AudioClip:
    """Band-limited sample-rate conversion.

    Kaiser-windowed sinc (beta 8.6), 64 zero crossings of the lower rate on
    each side, cutoff at 0.9 of the lower Nyquist frequency. Output length is
    ``round(frames * target / source)``.
    """
    if target_rate < 1:
        raise ValueError(f"target_rate must be >= 1, got {target_rate}")
    src = clip.sample_rate
    if target_rate == src:
        return AudioClip(src, clip.samples.copy())
    x = np.asarray(clip.samples, dtype=np.float64)
    n_in = x.shape[0]
    n_out = int(round(n_in * target_rate / src))
    g = gcd(src, target_rate)
    up, down = target_rate // g, src // g  # output j sits at input position j * down / up
    cutoff = RESAMPLE_ROLLOFF * 0.5 * min(1.0, target_rate / src)
    half_width = RESAMPLE_HALF_TAPS * max(1.0, src / target_rate)
    taps = np.arange(-int(np.ceil(half_width)), int(np.ceil(half_width)) + 1)

    # one kernel row per output phase
    phases = np.arange(up)
    frac = (phases * down % up) / up
    table = _resample_kernel(taps[None, :] - frac[:, None], cutoff, half_width)

    pad = len(taps)
    xp = np.concatenate([np.zeros((pad, x.shape[1])), x, np.zeros((pad, x.shape[1]))])
    out = np.empty((n_out, x.shape[1]))
    for start in range(0, n_out, chunk):
        j = np.arange(start, min(start + chunk, n_out))
        base = (j * down) // up
        idx = base[:, None] + taps[None, :] + pad
        kern = table[j % up]
        out[start : start + len(j)] = np.einsum("jt,jtc->jc", kern, xp[idx])
    dtype = np.float64 if clip.samples.dtype == np.float64 else np.float32
    return AudioClip(target_rate, out.astype(dtype))


def to_mono(clip: AudioClip) -> AudioClip:
    if clip.channels == 1:
        return AudioClip(clip.sample_rate, clip.samples.copy())
    return AudioClip(clip.sample_rate, clip.samples.mean(axis=1, keepdims=True))


def conform(clip: AudioClip, sample_rate: int, channels: int) -> AudioClip:
    """Resample and mix down (or duplicate mono) to match a model's input format."""
    if clip.channels != channels:
        if channels == 1:
            clip = to_mono(clip)
        elif clip.channels == 1:
            clip = AudioClip(clip.sample_rate, np.repeat(clip.samples, channels, axis=1))
        else:
            raise UsageError(f"cannot map {clip.channels} channels to {channels}")
    return resample(clip, sample_rate)


# ---------------------------------------------------------------------------
# datasets


@dataclass
class TrackEntry:
    name: str
    directory: Path
    mixture: Path | None
    sources: dict[str, Path]


@dataclass
class DatasetIndex:
    tracks: list[TrackEntry]
    source_names: tuple[str, ...]


@dataclass
class TrackPair:
    """K aligned source signals of one track; the mixture is always their sum."""

    sources: np.ndarray  # (K, frames, channels)
    sample_rate: int
    name: str = ""

    @property
    def mixture(self) -> np.ndarray:
        return self.sources.sum(axis=0)

    @property
    def frames(self) -> int:
        return self.sources.shape[1]

    @property
    def channels(self) -> int:
        return self.sources.shape[2]

    def source_clip(self, k: int) -> AudioClip:
        return AudioClip(self.sample_rate, self.sources[k])

    def mixture_clip(self) -> AudioClip:
        return AudioClip(self.sample_rate, self.mixture)

    @classmethod
    def from_clips(cls, clips: list[AudioClip], name: str = "") -> "TrackPair":
        rates = {c.sample_rate for c in clips}
        shapes = {c.samples.shape for c in clips}
        if len(rates) != 1 or len(shapes) != 1:
            raise DataError(f"track {name!r}: sources differ in rate or shape ({rates}, {shapes})")
        return cls(np.stack([c.samples for c in clips]), rates.pop(), name)


def index_dataset(root, source_names) -> DatasetIndex:
    """One sub-directory per track with ``<source>.wav`` files and an optional ``mixture.wav``."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    tracks = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        sources = {}
        for s in source_names:
            path = d / f"{s}.wav"
            if not path.is_file():
                raise DataError(f"track {d.name}: missing source file {path.name}")
            sources[s] = path
        mix = d / "mixture.wav"
        tracks.append(TrackEntry(d.name, d, mix if mix.is_file() else None, sources))
    return DatasetIndex(tracks, tuple(source_names))


def load_track(entry: TrackEntry, source_names, sample_rate: int, channels: int) -> TrackPair:
    clips = []
    for s in source_names:
        try:
            clip = read_wav(entry.sources[s])
        except DecodeError as exc:
            raise DataError(f"track {entry.name}: {exc}") from None
        clips.append(conform(clip, sample_rate, channels))
    n = min(c.frames for c in clips)
    if any(c.frames != n for c in clips):
        log.warning("track %s: source lengths differ, truncating to %d frames", entry.name, n)
        clips = [AudioClip(c.sample_rate, c.samples[:n]) for c in clips]
    return TrackPair.from_clips(clips, entry.name)


def write_track(pair: TrackPair, directory, source_names, format: str = "pcm16") -> TrackEntry:
    """Write ``<source>.wav`` per source plus ``mixture.wav`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sources = {}
    for k, s in enumerate(source_names):
        sources[s] = directory / f"{s}.wav"
        write_wav(pair.source_clip(k), sources[s], format)
    write_wav(pair.mixture_clip(), directory / "mixture.wav", format)
    return TrackEntry(directory.name, directory, directory / "mixture.wav", sources)


def split_tracks(index: DatasetIndex, val_fraction: float, seed: int) -> tuple[list[TrackEntry], list[TrackEntry]]:
    """Deterministic seeded shuffle, then the first ``val_fraction`` of tracks go to validation."""
    order = np.random.default_rng(seed).permutation(len(index.tracks))
    n_val = int(round(val_fraction * len(index.tracks)))
    if len(index.tracks) > 1:
        n_val = min(max(n_val, 1), len(index.tracks) - 1)
    val = [index.tracks[i] for i in sorted(order[:n_val])]
    train = [index.tracks[i] for i in sorted(order[n_val:])]
    return train, val


# ---------------------------------------------------------------------------
# full-track separation


def window_starts(n: int, output_frames: int) -> list[int]:
    """Start frame of every output window covering ``n`` frames; the last is aligned to the end."""
    starts = list(range(0, max(n, 1), output_frames))
    if starts[-1] + output_frames > n:
        starts[-1] = max(n - output_frames, 0)
    return starts


def extract_window(signal: np.ndarray, start: int, length: int) -> np.ndarray:
    """``signal[start:start+length]`` along axis 0 with zeros outside the signal."""
    n = signal.shape[0]
    out = np.zeros((length,) + signal.shape[1:], dtype=signal.dtype)
    lo, hi = max(start, 0), min(start + length, n)
    if hi > lo:
        out[lo - start : hi - start] = signal[lo:hi]
    return out


def separate_array(
    params: ParameterSet, config: ModelConfig, mixture: np.ndarray, batch_size: int = 4
) -> np.ndarray:
    """Separate a (frames, channels) mixture into (K, frames, channels) without blending.

    Consecutive output windows tile the track; each window sees the mixture
    with full context (zeros beyond the borders). When the final window is
    shifted back to end at the last frame, only its frames not already
    produced by the previous window are used.
    """
    n = mixture.shape[0]
    Ls, margin = config.output_frames, receptive_margin(config)
    starts = window_starts(n, Ls)
    dtype = next(iter(params.values())).dtype
    mix = np.asarray(mixture, dtype=dtype)
    out = np.zeros((config.num_sources, max(n, Ls), mixture.shape[1]), dtype=dtype)
    covered = 0
    for b in range(0, len(starts), batch_size):
        group = starts[b : b + batch_size]
        inputs = np.stack([extract_window(mix, s - margin, config.input_frames) for s in group])
        preds = predict(params, config, inputs)  # (K, batch, Ls, C)
        for i, s in enumerate(group):
            keep_from = covered - s
            out[:, covered : s + Ls] = preds[:, i, keep_from:]
            covered = s + Ls
    return out[:, :n]


def separate_track(
    params: ParameterSet, config: ModelConfig, mixture: AudioClip, batch_size: int = 4
) -> list[AudioClip]:
    if mixture.sample_rate != config.sample_rate:
        raise UsageError(f"mixture is {mixture.sample_rate} Hz, model expects {config.sample_rate} Hz")
    if mixture.channels != config.num_channels:
        raise UsageError(f"mixture has {mixture.channels} channels, model expects {config.num_channels}")
    est = separate_array(params, config, mixture.samples, batch_size)
    return [AudioClip(mixture.sample_rate, e) for e in est]
