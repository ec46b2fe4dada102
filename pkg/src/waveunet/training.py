"""Excerpt sampling, augmentation, Adam, and the two-stage early-stopping schedule."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import checkpoint as ckpt_io
from .audio import TrackPair, extract_window, separate_array
from .checkpoint import Checkpoint
from .errors import ConfigError, NumericalError
from .model import ModelConfig, ParameterSet, build, loss_and_grads, receptive_margin

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8
AUGMENT_RANGE = (0.7, 1.0)


@dataclass
class TrainHyper:
    """Optimisation settings. Defaults are the full-scale schedule."""

    lr: float = 1e-4
    lr_finetune: float = 1e-5
    batch: int = 16
    batch_finetune: int | None = None  # None: double ``batch``
    patience: int = 20
    iterations_per_epoch: int = 2000
    seed: int = 0
    augment: bool = True
    resume_moments: bool = True
    max_epochs_per_stage: int | None = None
    max_iterations: int | None = None
    val_fraction: float = 0.25
    dataset_dir: str | None = None

    @property
    def finetune_batch(self) -> int:
        return self.batch_finetune if self.batch_finetune is not None else 2 * self.batch


@dataclass
class TrainState:
    params: ParameterSet
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int = 0
    epoch: int = 0
    best_val_loss: float = float("inf")
    epochs_since_improvement: int = 0
    stage: str = "initial"
    stage_epochs: int = 0
    rng_state: dict | None = None

    @classmethod
    def fresh(cls, params: ParameterSet) -> "TrainState":
        return cls(
            params=params,
            adam_m={k: np.zeros_like(v) for k, v in params.items()},
            adam_v={k: np.zeros_like(v) for k, v in params.items()},
        )

    def bookkeeping(self) -> dict:
        return {
            "step": self.step,
            "epoch": self.epoch,
            "best_val_loss": self.best_val_loss,
            "epochs_since_improvement": self.epochs_since_improvement,
            "stage": self.stage,
            "stage_epochs": self.stage_epochs,
            "rng_state": self.rng_state,
        }


# ---------------------------------------------------------------------------
# data


def augment(pair: TrackPair, rng: np.random.Generator) -> TrackPair:
    """Scale every source by an independent factor from U[0.7, 1.0]; mixture follows as their sum."""
    lo, hi = AUGMENT_RANGE
    factors = rng.uniform(lo, hi, size=pair.sources.shape[0]).astype(pair.sources.dtype)
    return TrackPair(pair.sources * factors[:, None, None], pair.sample_rate, pair.name)


def sample_excerpt(
    pair: TrackPair, config: ModelConfig, rng: np.random.Generator, augment_sources: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Random training example: (mixture ``input_frames`` x C, sources K x ``output_frames`` x C).

    The output window start is uniform over all positions that keep it inside
    the track; the surrounding context is zero wherever it leaves the track.
    """
    Ls, margin = config.output_frames, receptive_margin(config)
    start = int(rng.integers(0, max(pair.frames - Ls, 0) + 1))
    window = np.stack([extract_window(s, start - margin, config.input_frames) for s in pair.sources])
    excerpt = TrackPair(window, pair.sample_rate, pair.name)
    if augment_sources:
        excerpt = augment(excerpt, rng)
    mixture = excerpt.mixture
    targets = excerpt.sources[:, margin : margin + Ls]
    return mixture, targets


def sample_batch(
    tracks: Sequence[TrackPair], config: ModelConfig, rng: np.random.Generator, size: int, augment_sources: bool
) -> tuple[np.ndarray, np.ndarray]:
    mixes, targets = [], []
    for _ in range(size):
        pair = tracks[int(rng.integers(len(tracks)))]
        m, t = sample_excerpt(pair, config, rng, augment_sources)
        mixes.append(m)
        targets.append(t)
    return np.stack(mixes), np.stack(targets, axis=1)


# ---------------------------------------------------------------------------
# optimisation


def adam_step(state: TrainState, grads: dict[str, np.ndarray], lr: float) -> TrainState:
    """One bias-corrected Adam update, in place; returns ``state`` for chaining."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name} at step {state.step + 1}")
    state.step += 1
    t = state.step
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    for name, p in state.params.items():
        g = grads[name].astype(p.dtype, copy=False)
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p -= (lr * m_hat / (np.sqrt(v_hat) + EPSILON)).astype(p.dtype, copy=False)
    return state


def validation_loss(params: ParameterSet, config: ModelConfig, val_set: Sequence[TrackPair]) -> float:
    """Mean over tracks of the MSE between full-track separations and the true sources."""
    if not val_set:
        raise ConfigError("validation set is empty")
    losses = []
    for pair in val_set:
        est = separate_array(params, config, pair.mixture)
        diff = est.astype(np.float64) - pair.sources
        losses.append(float(np.mean(diff * diff)))
    return float(np.mean(losses))


# ---------------------------------------------------------------------------
# schedule


def _to_checkpoint(state: TrainState, config: ModelConfig, hyper: TrainHyper, params=None) -> Checkpoint:
    return Checkpoint(
        config=config,
        params=(params if params is not None else state.params).copy(),
        adam_m={k: v.copy() for k, v in state.adam_m.items()},
        adam_v={k: v.copy() for k, v in state.adam_v.items()},
        training={"hyper": asdict(hyper), "state": state.bookkeeping()},
    )


def state_from_checkpoint(ck: Checkpoint) -> TrainState:
    info = (ck.training or {}).get("state", {})
    state = TrainState(
        params=ck.params.copy(),
        adam_m=ck.adam_m or {k: np.zeros_like(v) for k, v in ck.params.items()},
        adam_v=ck.adam_v or {k: np.zeros_like(v) for k, v in ck.params.items()},
    )
    for key in ("step", "epoch", "best_val_loss", "epochs_since_improvement", "stage", "stage_epochs", "rng_state"):
        if key in info:
            setattr(state, key, info[key])
    return state


def train(
    train_set: Sequence[TrackPair],
    val_set: Sequence[TrackPair],
    config: ModelConfig,
    hyper: TrainHyper,
    out_dir=None,
    resume: Checkpoint | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> Checkpoint:
    """Two-stage training with early stopping; returns the best-validation checkpoint.

    Stage ``initial`` uses ``lr``/``batch``; once ``patience`` epochs pass
    without a new best validation loss, stage ``fine_tune`` continues from the
    last state with ``lr_finetune`` and the doubled batch until the same
    patience runs out again. With ``out_dir`` set, ``last.ckpt`` (full state,
    for resuming), ``best.ckpt`` and ``train_log.csv`` are written after every
    epoch.
    """
    if not train_set or not val_set:
        raise ConfigError("train and validation sets must be non-empty")
    config.validate()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        state = state_from_checkpoint(resume)
        rng = np.random.default_rng()
        rng.bit_generator.state = state.rng_state
        best = _load_best(out, resume, state, config, hyper)
    else:
        state = TrainState.fresh(build(config, hyper.seed))
        rng = np.random.default_rng(hyper.seed)
        best = None

    log_rows: list[dict] = []
    if out is not None and resume is not None and (out / "train_log.csv").exists():
        with open(out / "train_log.csv", newline="") as fh:
            log_rows = list(csv.DictReader(fh))

    stages = [("initial", hyper.lr, hyper.batch), ("fine_tune", hyper.lr_finetune, hyper.finetune_batch)]
    first = 0 if state.stage == "initial" else 1
    for si in range(first, len(stages)):
        name, lr, batch = stages[si]
        if state.stage != name:
            state.stage = name
            state.epochs_since_improvement = 0
            state.stage_epochs = 0
            if not hyper.resume_moments:
                state.adam_m = {k: np.zeros_like(v) for k, v in state.params.items()}
                state.adam_v = {k: np.zeros_like(v) for k, v in state.params.items()}
        while not _stage_done(state, hyper):
            train_losses = []
            for _ in range(hyper.iterations_per_epoch):
                if hyper.max_iterations is not None and state.step >= hyper.max_iterations:
                    break
                mix, tgt = sample_batch(train_set, config, rng, batch, hyper.augment)
                loss, grads = loss_and_grads(state.params, config, mix, tgt)
                adam_step(state, grads, lr)
                train_losses.append(loss)
            if not train_losses:
                break
            state.epoch += 1
            state.stage_epochs += 1
            val = validation_loss(state.params, config, val_set)
            if not np.isfinite(val):
                raise NumericalError(f"validation loss is {val} at epoch {state.epoch}; last good checkpoint kept")
            if val < state.best_val_loss:
                state.best_val_loss = val
                state.epochs_since_improvement = 0
                best = state.params.copy()
            else:
                state.epochs_since_improvement += 1
            state.rng_state = rng.bit_generator.state
            row = {
                "epoch": state.epoch,
                "stage": name,
                "train_mse": float(np.mean(train_losses)),
                "val_mse": val,
            }
            log_rows.append(row)
            log.info("epoch %d [%s] train_mse=%.6g val_mse=%.6g", state.epoch, name, row["train_mse"], val)
            if out is not None:
                ckpt_io.save(_to_checkpoint(state, config, hyper, best), out / "best.ckpt")
                ckpt_io.save(_to_checkpoint(state, config, hyper), out / "last.ckpt")
                _write_log(out / "train_log.csv", log_rows)
            if on_epoch is not None:
                on_epoch(row)
        if hyper.max_iterations is not None and state.step >= hyper.max_iterations:
            break
    return _to_checkpoint(state, config, hyper, best)


def _stage_done(state: TrainState, hyper: TrainHyper) -> bool:
    # every stage runs at least one epoch, so patience 0 means exactly one
    if state.stage_epochs == 0:
        return False
    if state.epochs_since_improvement >= hyper.patience:
        return True
    return hyper.max_epochs_per_stage is not None and state.stage_epochs >= hyper.max_epochs_per_stage


def _load_best(out, resume, state, config, hyper):
    if out is not None and (out / "best.ckpt").exists():
        return ckpt_io.load(out / "best.ckpt").params
    return resume.params.copy()


def _write_log(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "stage", "train_mse", "val_mse"])
        w.writeheader()
        for r in rows:
            w.writerow(r)


# ---------------------------------------------------------------------------
# config files

_HYPER_KEYS = {f.name for f in fields(TrainHyper)}


def load_train_config(path) -> tuple[ModelConfig, TrainHyper]:
    """JSON with a ``model`` entry (preset name or field dict) plus TrainHyper fields."""
    from .model import load_preset

    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read training config {path}: {exc}") from None
    if "model" not in raw:
        raise ConfigError(f"{path}: missing 'model' entry")
    model = raw.pop("model")
    if isinstance(model, str):
        config = load_preset(model)
    else:
        base = model.pop("preset", None) if isinstance(model, dict) else None
        config = load_preset(base).replace(**model) if base else ModelConfig.from_dict(model)
    unknown = set(raw) - _HYPER_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown training fields {sorted(unknown)}")
    hyper = TrainHyper(**raw)
    if hyper.dataset_dir is not None and not Path(hyper.dataset_dir).is_absolute():
        hyper.dataset_dir = str((path.parent / hyper.dataset_dir).resolve())
    config.validate()
    return config, hyper
