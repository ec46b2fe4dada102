"""Wave-U-Net graph construction, size calculus and forward separation.

Two resampling regimes are supported:

* zero-padded (``context=False``): every convolution keeps the frame count,
  input and output windows are the same length.
* context (``context=True``): convolutions are valid, every feature map
  that gets decimated has an odd number of frames, and upsampling maps
  ``n`` frames to ``2n - 1`` without extrapolating. The network predicts the
  centre ``output_frames`` of an ``input_frames``-long mixture window.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError, SizeError
from .tensor import ConvParams, Tensor, UpsampleWeights

DEFAULT_SOURCE_NAMES = {
    2: ("vocals", "accompaniment"),
    4: ("bass", "drums", "other", "vocals"),
}


@dataclass(frozen=True)
class ModelConfig:
    levels: int = 12
    filters_per_level: int = 24
    down_kernel: int = 15
    up_kernel: int = 5
    num_sources: int = 2
    num_channels: int = 1
    context: bool = False
    difference_output: bool = False
    upsampling: str = "linear"
    input_frames: int = 16384
    output_frames: int = 16384
    leaky_slope: float = T.LEAKY_SLOPE
    sample_rate: int = 22050
    source_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.source_names:
            names = DEFAULT_SOURCE_NAMES.get(
                self.num_sources, tuple(f"source{k + 1}" for k in range(self.num_sources))
            )
            object.__setattr__(self, "source_names", names)
        else:
            object.__setattr__(self, "source_names", tuple(self.source_names))

    def validate(self, check_sizes: bool = True) -> None:
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if self.filters_per_level < 1:
            raise ConfigError(f"filters_per_level must be >= 1, got {self.filters_per_level}")
        if self.num_sources < 2:
            raise ConfigError(f"num_sources must be >= 2, got {self.num_sources}")
        if self.num_channels not in (1, 2):
            raise ConfigError(f"num_channels must be 1 or 2, got {self.num_channels}")
        for name in ("down_kernel", "up_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{name} must be a positive odd integer, got {k}")
        if self.upsampling not in ("linear", "learned"):
            raise ConfigError(f"upsampling must be 'linear' or 'learned', got {self.upsampling!r}")
        if len(self.source_names) != self.num_sources:
            raise ConfigError(
                f"{len(self.source_names)} source names given for {self.num_sources} sources"
            )
        if self.sample_rate < 1:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if not self.context and self.input_frames != self.output_frames:
            raise ConfigError(
                "without context input_frames must equal output_frames "
                f"({self.input_frames} != {self.output_frames})"
            )
        if self.context and self.input_frames <= self.output_frames:
            raise ConfigError(
                "with context input_frames must exceed output_frames "
                f"({self.input_frames} <= {self.output_frames})"
            )
        if check_sizes:
            out = output_frames_for(self, self.input_frames)
            if out != self.output_frames:
                raise ConfigError(
                    f"input_frames={self.input_frames} yields {out} output frames, "
                    f"config states {self.output_frames}"
                )

    @property
    def num_heads(self) -> int:
        return self.num_sources - 1 if self.difference_output else self.num_sources

    def replace(self, **changes) -> "ModelConfig":
        d = asdict(self)
        d.update(changes)
        if "num_sources" in changes and "source_names" not in changes:
            d["source_names"] = ()
        return ModelConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source_names"] = list(self.source_names)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config fields: {sorted(unknown)}")
        d = dict(d)
        if "source_names" in d:
            d["source_names"] = tuple(d["source_names"])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# size calculus


def _trace(config: ModelConfig, n: int) -> list[tuple[str, int, int]]:
    """Walk frame/channel counts through the network, raising on the first infeasible block."""
    L, Fc = config.levels, config.filters_per_level
    fd, fu, C = config.down_kernel, config.up_kernel, config.num_channels
    rows = [("input", n, C)]

    def conv(name, frames, k, ch):
        if config.context:
            if frames < k:
                raise SizeError(f"{name}: {frames} frames is fewer than filter size {k}")
            frames = frames - k + 1
        rows.append((name, frames, ch))
        return frames

    skips = []
    for i in range(1, L + 1):
        n = conv(f"ds{i}.conv", n, fd, Fc * i)
        skips.append(n)
        if config.context and (n < 3 or n % 2 == 0):
            raise SizeError(f"ds{i}.decimate: context mode needs an odd frame count >= 3, got {n}")
        n = (n + 1) // 2
        rows.append((f"ds{i}.decimate", n, Fc * i))
    n = conv("bottleneck", n, fd, Fc * (L + 1))
    for i in range(L, 0, -1):
        if n < 2:
            raise SizeError(f"us{i}.upsample: needs at least 2 frames, got {n}")
        skip = skips[i - 1]
        up = 2 * n - 1
        if not config.context and skip == 2 * n:
            up = 2 * n
        rows.append((f"us{i}.upsample", up, Fc * (i + 1)))
        diff = skip - up
        if diff < 0 or diff % 2:
            raise SizeError(f"us{i}.concat: cannot centre-crop {skip} skip frames to {up}")
        rows.append((f"us{i}.concat", up, Fc * (i + 1) + Fc * i))
        n = conv(f"us{i}.conv", up, fu, Fc * i)
    diff = rows[0][1] - n
    if diff < 0 or diff % 2:
        raise SizeError(f"concat_input: cannot centre-crop {rows[0][1]} input frames to {n}")
    rows.append(("concat_input", n, Fc + C))
    rows.append(("output", n, config.num_sources * C))
    return rows


def shape_trace(config: ModelConfig) -> list[tuple[str, int, int]]:
    """(block name, frames, channels) after every block for an ``input_frames`` input."""
    config.validate(check_sizes=False)
    return _trace(config, config.input_frames)


def output_frames_for(config: ModelConfig, input_frames: int) -> int:
    return _trace(config, input_frames)[-1][1]


def _up_path(config: ModelConfig, bottleneck: int) -> int | None:
    n = bottleneck
    for _ in range(config.levels):
        if n < 2:
            return None
        n = 2 * n - 1
        if n < config.up_kernel:
            return None
        n = n - config.up_kernel + 1
    return n


def _down_path_inverse(config: ModelConfig, bottleneck: int) -> int:
    n = bottleneck + config.down_kernel - 1
    for _ in range(config.levels):
        n = 2 * n - 1
        n = n + config.down_kernel - 1
    return n


def compute_valid_sizes(config: ModelConfig, desired_output: int) -> tuple[int, int]:
    """Smallest feasible output size >= ``desired_output`` and the input size it needs."""
    if desired_output < 1:
        raise ValueError(f"desired_output must be >= 1, got {desired_output}")
    if not config.context:
        n = desired_output
        while True:
            try:
                if output_frames_for(config, n) == n:
                    return n, n
            except SizeError:
                pass
            n += 1
    # output size grows strictly with the bottleneck size, so scan upward
    b = 1
    while True:
        out = _up_path(config, b)
        if out is not None and out >= desired_output:
            n_in = _down_path_inverse(config, b)
            if output_frames_for(config, n_in) == out:
                return n_in, out
        b += 1


def with_valid_sizes(config: ModelConfig, desired_output: int) -> ModelConfig:
    n_in, n_out = compute_valid_sizes(config, desired_output)
    return config.replace(input_frames=n_in, output_frames=n_out)


def receptive_margin(config: ModelConfig) -> int:
    """Context frames on each side of the output window."""
    return (config.input_frames - config.output_frames) // 2


# ---------------------------------------------------------------------------
# parameters


class ParameterSet(dict):
    """Ordered mapping of parameter name -> numpy array.

    Names are ``ds{i}.filters``, ``ds{i}.bias``, ``bottleneck.*``,
    ``us{i}.upsample`` (learned upsampling only), ``us{i}.filters``,
    ``us{i}.bias`` and ``out{k}.filters`` / ``out{k}.bias`` for each
    tanh output head.
    """

    def count(self) -> int:
        return int(sum(a.size for a in self.values()))

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet((k, v.astype(dtype)) for k, v in self.items())

    def copy(self) -> "ParameterSet":
        return ParameterSet((k, v.copy()) for k, v in self.items())


def parameter_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    L, Fc, C = config.levels, config.filters_per_level, config.num_channels
    fd, fu = config.down_kernel, config.up_kernel
    layout = []
    cin = C
    for i in range(1, L + 1):
        layout += [(f"ds{i}.filters", (fd, cin, Fc * i)), (f"ds{i}.bias", (Fc * i,))]
        cin = Fc * i
    layout += [("bottleneck.filters", (fd, cin, Fc * (L + 1))), ("bottleneck.bias", (Fc * (L + 1),))]
    cin = Fc * (L + 1)
    for i in range(L, 0, -1):
        if config.upsampling == "learned":
            layout.append((f"us{i}.upsample", (cin,)))
        layout += [(f"us{i}.filters", (fu, cin + Fc * i, Fc * i)), (f"us{i}.bias", (Fc * i,))]
        cin = Fc * i
    for k in range(1, config.num_heads + 1):
        layout += [(f"out{k}.filters", (1, Fc + C, C)), (f"out{k}.bias", (C,))]
    return layout


def build(config: ModelConfig, rng_seed: int = 0, dtype=np.float32) -> ParameterSet:
    """Glorot-uniform filters, zero biases, zero upsampling weights (sigmoid 0.5)."""
    config.validate()
    rng = np.random.default_rng(rng_seed)
    params = ParameterSet()
    for name, shape in parameter_layout(config):
        if name.endswith(".filters"):
            f, cin, cout = shape
            bound = np.sqrt(6.0 / (f * cin + f * cout))
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


# ---------------------------------------------------------------------------
# forward


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def forward_tensors(tensors: dict[str, Tensor], config: ModelConfig, mixture) -> list[Tensor]:
    """Run the network on parameter tensors; records a graph if any of them require grad."""
    mix = _as_tensor(mixture)
    if mix.data.ndim == 2:
        mix = Tensor(mix.data[None])
    if mix.data.ndim != 3:
        raise ShapeError(f"mixture must be (batch, frames, channels), got {mix.shape}")
    if mix.channels != config.num_channels:
        raise ShapeError(f"mixture has {mix.channels} channels, model expects {config.num_channels}")
    if mix.frames != config.input_frames:
        raise ShapeError(f"mixture has {mix.frames} frames, model expects {config.input_frames}")

    padding = "valid" if config.context else "same"
    slope = config.leaky_slope
    L = config.levels

    def conv(x, prefix):
        p = ConvParams(tensors[f"{prefix}.filters"], tensors[f"{prefix}.bias"])
        return T.conv1d(x, p, padding, name=prefix)

    skips = []
    x = mix
    for i in range(1, L + 1):
        x = T.leaky_relu(conv(x, f"ds{i}"), slope)
        skips.append(x)
        x = T.decimate(x, strict=config.context)
    x = T.leaky_relu(conv(x, "bottleneck"), slope)
    for i in range(L, 0, -1):
        skip = skips[i - 1]
        if config.upsampling == "learned":
            x = T.upsample_learned(x, UpsampleWeights(tensors[f"us{i}.upsample"]))
        else:
            x = T.upsample_linear(x)
        if not config.context and skip.frames == x.frames + 1:
            x = T.repeat_last_frame(x)
        x = T.concat_crop(x, skip)
        x = T.leaky_relu(conv(x, f"us{i}"), slope)
    x = T.concat_crop(x, mix)

    outputs = [T.tanh(conv(x, f"out{k}")) for k in range(1, config.num_heads + 1)]
    if config.difference_output:
        last = T.center_crop(mix, x.frames)
        for s in outputs:
            last = T.sub(last, s)
        outputs.append(last)
    return outputs


def forward(params: ParameterSet, config: ModelConfig, mixture) -> list[Tensor]:
    """Separate a (batch, input_frames, channels) mixture into K source estimates.

    Each estimate is (batch, output_frames, channels). No graph is recorded.
    """
    tensors = {k: Tensor(v) for k, v in params.items()}
    return forward_tensors(tensors, config, mixture)


def predict(params: ParameterSet, config: ModelConfig, mixture: np.ndarray) -> np.ndarray:
    """Array-in, array-out forward: returns (K, batch, output_frames, channels)."""
    return np.stack([o.data for o in forward(params, config, mixture)])


def loss_and_grads(
    params: ParameterSet, config: ModelConfig, mixture: np.ndarray, targets: np.ndarray
) -> tuple[float, dict[str, np.ndarray]]:
    """MSE over all source outputs and its gradient with respect to every parameter.

    ``targets`` is (K, batch, output_frames, channels).
    """
    tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    outputs = forward_tensors(tensors, config, mixture)
    pred = T.stack_channels(outputs)
    target = Tensor(np.concatenate(list(targets), axis=2).astype(pred.dtype, copy=False))
    loss = T.mse_loss(pred, target)
    T.backward(loss)
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
    return float(loss.data), grads


def load_preset(name: str) -> ModelConfig:
    from importlib import resources

    path = resources.files("waveunet") / "presets" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}")
    return ModelConfig.from_dict(json.loads(path.read_text()))


def preset_names() -> list[str]:
    from importlib import resources

    return sorted(p.name[:-5] for p in (resources.files("waveunet") / "presets").iterdir() if p.name.endswith(".json"))


def iter_parameter_names(config: ModelConfig) -> Iterable[str]:
    return (name for name, _ in parameter_layout(config))
