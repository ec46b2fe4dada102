"""
Why interpolate instead of inserting zeros
==========================================

Upsampling by zero insertion (what a stride-2 transposed convolution does
before its filter) puts a mirror image of the spectrum above the old
Nyquist rate. Unless later filters remove it, that image comes out as a
high-pitched buzz. Linear interpolation suppresses most of it, and learned
interpolation starts out equal to linear interpolation.
"""
import numpy as np

from waveunet import tensor as T
from waveunet.tensor import Tensor, UpsampleWeights

rate = 8000
t = np.arange(2001) / rate
x = np.sin(2 * np.pi * 300 * t)[None, :, None]  # smooth, well below Nyquist


def image_energy(y):
    """Share of energy above half the new Nyquist rate, in dB."""
    spec = np.abs(np.fft.rfft(y * np.hanning(len(y)))) ** 2
    half = len(spec) // 2
    return 10 * np.log10(spec[half:].sum() / spec.sum())


zero_stuffed = np.zeros((1, 2 * x.shape[1] - 1, 1))
zero_stuffed[:, ::2] = x
linear = T.upsample_linear(Tensor(x)).data
learned = T.upsample_learned(Tensor(x), UpsampleWeights(Tensor(np.zeros(1)))).data

print(f"zero insertion : {image_energy(zero_stuffed[0, :, 0]):7.1f} dB of energy in the image band")
print(f"linear         : {image_energy(linear[0, :, 0]):7.1f} dB")
print(f"learned, w = 0 : {image_energy(learned[0, :, 0]):7.1f} dB (identical to linear)")

# The original samples survive untouched at even positions, so dropping
# every other frame undoes the upsampling exactly.
print("decimate(upsample(x)) == x:", np.array_equal(T.decimate(Tensor(linear)).data, x))

# A learned weight moves each new sample between its two neighbours.
for w in (-4.0, 0.0, 4.0):
    y = T.upsample_learned(Tensor(np.array([[[0.0], [1.0]]])), UpsampleWeights(Tensor(np.array([w])))).data
    print(f"w={w:+.0f}: midpoint between 0 and 1 becomes {y[0, 1, 0]:.3f}")
