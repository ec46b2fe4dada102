"""Wave-U-Net source separation on a small numpy autodiff core."""
from .audio import AudioClip, TrackPair, read_wav, resample, separate_track, write_wav
from .checkpoint import Checkpoint
from .errors import WaveUNetError
from .evaluation import EvalReport, segment_sdr, summarize
from .model import ModelConfig, build, compute_valid_sizes, forward, load_preset, predict, shape_trace
from .training import TrainHyper, train

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "Checkpoint",
    "EvalReport",
    "ModelConfig",
    "TrackPair",
    "TrainHyper",
    "WaveUNetError",
    "build",
    "compute_valid_sizes",
    "forward",
    "load_preset",
    "predict",
    "read_wav",
    "resample",
    "segment_sdr",
    "separate_track",
    "shape_trace",
    "summarize",
    "train",
    "write_wav",
]
