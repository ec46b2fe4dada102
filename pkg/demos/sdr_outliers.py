"""
Why report the median of segment SDRs
=====================================

SDR is computed per one-second segment. Where a singer pauses, the
reference is nearly silent, so even a faint residual in the estimate gives
a hugely negative score. A handful of such segments drag the mean far
down while the median barely moves.
"""
import math

import numpy as np

from waveunet.audio import AudioClip
from waveunet.evaluation import segment_sdr, summarize

sr, seconds = 1000, 60
rng = np.random.default_rng(0)
t = np.arange(sr * seconds) / sr

# Mostly audible singing, six near-silent seconds and four truly silent ones.
level = rng.uniform(0.2, 0.5, size=seconds)
quiet = rng.choice(seconds, size=10, replace=False)
level[quiet[:6]] = 1e-3
level[quiet[6:]] = 0.0
vocals = np.repeat(level, sr) * np.sin(2 * np.pi * 110 * t)

# The estimate is right, plus a constant low-level leak from the band.
estimate = vocals + 0.01 * rng.normal(size=vocals.size)

scores = segment_sdr(AudioClip(sr, vocals[:, None]), AudioClip(sr, estimate[:, None]))
stats = summarize(scores)
print(f"{stats.n_segments} segments, {stats.n_excluded} excluded because the reference is silent")
print(f"median {stats.median:6.2f} dB   MAD {stats.mad:5.2f}")
print(f"mean   {stats.mean:6.2f} dB   SD  {stats.sd:5.2f}")

finite = sorted(s.value for s in scores if s.value is not None and math.isfinite(s.value))
print("five worst segments:", [round(v, 1) for v in finite[:5]])

# Trimming the worst tenth shifts the mean by several dB and the median by
# a fraction of one.
trimmed = summarize(finite[math.ceil(0.1 * len(finite)) :])
print(f"without the bottom decile: median {trimmed.median:.2f}, mean {trimmed.mean:.2f}")
