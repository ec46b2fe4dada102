"""
Input and output sizes of a context model
=========================================

Without zero padding every convolution eats ``f - 1`` frames and every
decimation needs an odd length, so only some input lengths are usable.
This walks through the numbers for the full-size configuration.
"""
from waveunet.model import ModelConfig, compute_valid_sizes, load_preset, receptive_margin, shape_trace

# 12 levels, 15-tap downsampling filters and 5-tap upsampling filters.
config = load_preset("m3")
n_in, n_out = compute_valid_sizes(config, 16384)
print(f"asking for 16384 output frames gives input {n_in}, output {n_out}")

# The surplus is split evenly on both sides of the predicted window.
print("context on each side:", receptive_margin(config), "frames")
print("that is", round(receptive_margin(config) / config.sample_rate, 2), "seconds at", config.sample_rate, "Hz")

# Frame counts shrink on the way down, bottom out, and grow again.
for name, frames, channels in shape_trace(config):
    if name in ("input", "ds1.decimate", "ds12.decimate", "bottleneck", "output"):
        print(f"  {name:<14} {frames:>7} frames x {channels} channels")

# The base model pads instead, so input and output lengths agree.
base = load_preset("m1")
rows = shape_trace(base)
print("\nbase model, last rows of the trace:")
for name, frames, channels in rows[-3:]:
    print(f"  {name:<14} ({frames},{channels})")

# Smaller networks need far less context.
for levels in (2, 4, 8):
    small = ModelConfig(levels=levels, down_kernel=15, up_kernel=5, context=True, input_frames=2, output_frames=1)
    print(f"L={levels:<2} want 1000 -> (input, output) = {compute_valid_sizes(small, 1000)}")
