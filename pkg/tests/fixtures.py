"""Synthetic signals shared by the evaluation, training and acceptance tests."""
import numpy as np

from waveunet.audio import AudioClip, TrackPair, write_track


def tone_and_noise(seconds=6.0, sr=8000, seed=0):
    """Two-source track: a two-partial tone and band-passed noise of equal RMS."""
    n = int(seconds * sr)
    rng = np.random.default_rng(seed)
    t = np.arange(n) / sr
    tone = 0.25 * np.sin(2 * np.pi * 220 * t) + 0.1 * np.sin(2 * np.pi * 440 * t + 0.3)
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n, 1 / sr)
    spec[(f < 1500) | (f > 3000)] = 0
    noise = np.fft.irfft(spec, n)
    noise *= np.std(tone) / np.std(noise)
    return TrackPair(np.stack([tone, noise])[:, :, None].astype(np.float32), sr, "tone_noise")


def quiet_vocal_track(sr=1000, seconds=60, seed=0, leak=0.01):
    """Vocal reference with loud, near-silent and fully silent one-second passages.

    Returns (reference vocals, estimate) where the estimate is the reference
    plus a constant low-level leak, the behaviour of a separator that is
    quiet but not silent where the singer pauses.
    """
    rng = np.random.default_rng(seed)
    n = sr * seconds
    t = np.arange(n) / sr
    envelope = np.empty(n)
    levels = rng.uniform(0.2, 0.5, size=seconds)
    kinds = np.zeros(seconds, dtype=int)
    kinds[rng.choice(seconds, size=6, replace=False)] = 1  # near-silent
    silent = rng.choice(np.flatnonzero(kinds == 0), size=4, replace=False)
    kinds[silent] = 2
    for i in range(seconds):
        envelope[i * sr : (i + 1) * sr] = {0: levels[i], 1: 1e-3, 2: 0.0}[kinds[i]]
    vocals = envelope * np.sin(2 * np.pi * 110 * t + rng.uniform(0, 6))
    estimate = vocals + leak * rng.normal(size=n)
    return AudioClip(sr, vocals[:, None]), AudioClip(sr, estimate[:, None]), kinds


def write_tone_dataset(root, n_tracks=3, seconds=2.0, names=("vocals", "accompaniment")):
    """Dataset directory of tone-and-noise tracks with distinct seeds."""
    for i in range(n_tracks):
        pair = tone_and_noise(seconds=seconds, seed=i)
        write_track(pair, f"{root}/track{i:02d}", names)
    return root
