"""
A synthetic two-source dataset
==============================

Writes a few short tracks in the on-disk layout the loader expects: one
directory per track holding ``vocals.wav``, ``accompaniment.wav`` and
``mixture.wav``. The "vocals" are a gliding two-partial tone and the
"accompaniment" is band-passed noise.

    python3 demos/make_tiny_dataset.py [target_dir]

The default target is ``configs/tiny_data``, which ``configs/tiny.json``
trains on.
"""
import sys
from pathlib import Path

import numpy as np

from waveunet.audio import TrackPair, write_track

SR = 8000


def make_track(seed, seconds=6.0):
    rng = np.random.default_rng(seed)
    n = int(seconds * SR)
    t = np.arange(n) / SR
    f0 = rng.uniform(180, 300) * (1 + 0.05 * np.sin(2 * np.pi * 0.3 * t))
    phase = 2 * np.pi * np.cumsum(f0) / SR
    tone = 0.25 * np.sin(phase) + 0.1 * np.sin(2 * phase + 0.3)
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n, 1 / SR)
    spec[(f < 1500) | (f > 3000)] = 0
    noise = np.fft.irfft(spec, n)
    noise *= np.std(tone) / np.std(noise)
    return TrackPair(np.stack([tone, noise])[:, :, None].astype(np.float32), SR, f"synth{seed:02d}")


if __name__ == "__main__":
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "configs" / "tiny_data"
    for seed in range(3):
        entry = write_track(make_track(seed), root / f"synth{seed:02d}", ["vocals", "accompaniment"])
        print("wrote", entry.directory)
