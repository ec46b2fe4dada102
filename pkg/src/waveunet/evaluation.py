"""Segment-wise SDR with silent-segment exclusion and rank-based summaries.

Segment SDR values are heavy-tailed: a near-silent reference with a quiet
but non-zero estimate yields a very negative score. Reports therefore carry
the median and the median absolute deviation next to the mean and standard
deviation.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .audio import AudioClip, DatasetIndex, TrackPair, load_track, separate_track
from .errors import EmptyStatsError, UsageError
from .model import ModelConfig, ParameterSet

log = logging.getLogger(__name__)

EXCLUDED = None
INF = math.inf


@dataclass(frozen=True)
class SegmentScore:
    track: str
    source: str
    segment: int
    value: float | None  # dB, +inf for a perfect segment, None when excluded

    @property
    def excluded(self) -> bool:
        return self.value is None


@dataclass
class SummaryStats:
    median: float
    mad: float
    mean: float
    sd: float
    n_segments: int
    n_excluded: int
    n_infinite: int


def _sdr(ref: np.ndarray, est: np.ndarray, mode: str) -> float | None:
    ref = ref.astype(np.float64).ravel()
    est = est.astype(np.float64).ravel()
    energy = float(np.dot(ref, ref))
    if energy == 0.0:
        return EXCLUDED
    if mode == "projected":
        ref = (float(np.dot(est, ref)) / energy) * ref
        energy = float(np.dot(ref, ref))
        if energy == 0.0:
            # estimate orthogonal to the reference
            return -INF
    err = ref - est
    noise = float(np.dot(err, err))
    if noise == 0.0:
        return INF
    return 10.0 * math.log10(energy / noise)


def segment_sdr(
    reference: AudioClip,
    estimate: AudioClip,
    segment_seconds: float = 1.0,
    mode: str = "plain",
    track: str = "",
    source: str = "",
) -> list[SegmentScore]:
    """Score non-overlapping segments; a trailing partial segment is dropped.

    ``plain`` is 10 log10(|s|^2 / |s - s_hat|^2). ``projected`` first replaces
    s by its scaled version alpha*s with alpha = <s_hat, s>/|s|^2, which makes
    the score blind to a pure gain error. Channels are flattened together.
    """
    if mode not in ("plain", "projected"):
        raise ValueError(f"unknown SDR mode {mode!r}")
    if segment_seconds <= 0:
        raise ValueError(f"segment_seconds must be positive, got {segment_seconds}")
    if reference.samples.shape != estimate.samples.shape or reference.sample_rate != estimate.sample_rate:
        raise UsageError(
            f"reference {reference.samples.shape}@{reference.sample_rate} and estimate "
            f"{estimate.samples.shape}@{estimate.sample_rate} differ"
        )
    seg = int(round(segment_seconds * reference.sample_rate))
    if seg < 1:
        raise ValueError("segment is shorter than one sample")
    scores = []
    for i in range(reference.frames // seg):
        sl = slice(i * seg, (i + 1) * seg)
        value = _sdr(reference.samples[sl], estimate.samples[sl], mode)
        scores.append(SegmentScore(track, source, i, value))
    return scores


def _median(sorted_values: list[float]) -> float:
    n = len(sorted_values)
    if n % 2:
        return sorted_values[n // 2]
    lo, hi = sorted_values[n // 2 - 1], sorted_values[n // 2]
    if hi == INF and lo != INF:
        # exactly half the values are +inf: stay finite
        return lo
    return (lo + hi) / 2


def _deviation(x: float, m: float) -> float:
    if x == m:
        return 0.0
    return abs(x - m)


def summarize(scores: Sequence[SegmentScore] | Sequence[float]) -> SummaryStats:
    """Median/MAD over finite and infinite scores; mean/SD (population) over finite ones."""
    values = [s.value if isinstance(s, SegmentScore) else s for s in scores]
    kept = sorted(v for v in values if v is not None)
    n_excluded = len(values) - len(kept)
    if not kept:
        raise EmptyStatsError("every segment is excluded; no statistics can be computed")
    median = _median(kept)
    mad = _median(sorted(_deviation(v, median) for v in kept))
    finite = np.array([v for v in kept if math.isfinite(v)], dtype=np.float64)
    mean = float(finite.mean()) if finite.size else math.nan
    sd = float(finite.std()) if finite.size else math.nan
    return SummaryStats(
        median=float(median),
        mad=float(mad),
        mean=mean,
        sd=sd,
        n_segments=len(values),
        n_excluded=n_excluded,
        n_infinite=sum(1 for v in kept if math.isinf(v)),
    )


# ---------------------------------------------------------------------------
# dataset evaluation


@dataclass
class EvalReport:
    scores: list[SegmentScore]
    stats: dict[str, SummaryStats]
    metadata: dict = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        def clean(x):
            if isinstance(x, float) and not math.isfinite(x):
                return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
            return x

        stats = {k: {kk: clean(vv) for kk, vv in asdict(v).items()} for k, v in self.stats.items()}
        body = {"metadata": self.metadata, "stats": stats, "failures": self.failures}
        return json.dumps(body, indent=2, sort_keys=True)

    def write(self, json_path, csv_path) -> None:
        Path(json_path).write_text(self.to_json() + "\n")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["track", "source", "segment", "sdr_db"])
            for s in self.scores:
                if s.value is None:
                    v = "excluded"
                elif math.isinf(s.value):
                    v = "inf" if s.value > 0 else "-inf"
                else:
                    v = repr(float(s.value))
                w.writerow([s.track, s.source, s.segment, v])

    def table(self) -> str:
        """Per-source Med./MAD/Mean/SD rows."""
        lines = [f"{'source':<14}{'Med.':>9}{'MAD':>9}{'Mean':>9}{'SD':>9}"]
        for name, st in self.stats.items():
            lines.append(f"{name:<14}{st.median:>9.2f}{st.mad:>9.2f}{st.mean:>9.2f}{st.sd:>9.2f}")
        return "\n".join(lines)


def score_sources(
    track: str,
    references: Sequence[AudioClip],
    estimates: Sequence[AudioClip],
    source_names: Sequence[str],
    segment_seconds: float = 1.0,
    mode: str = "plain",
) -> list[SegmentScore]:
    scores = []
    for name, ref, est in zip(source_names, references, estimates):
        scores += segment_sdr(ref, est, segment_seconds, mode, track=track, source=name)
    return scores


def build_report(scores: list[SegmentScore], source_names, metadata: dict, failures=()) -> EvalReport:
    stats = {}
    for name in source_names:
        subset = [s for s in scores if s.source == name]
        try:
            stats[name] = summarize(subset)
        except EmptyStatsError:
            log.warning("source %s: no scorable segments", name)
    return EvalReport(scores, stats, metadata, list(failures))


def evaluate_tracks(
    tracks: Sequence[TrackPair],
    source_names: Sequence[str],
    separator: Callable[[AudioClip], list[AudioClip]],
    segment_seconds: float = 1.0,
    mode: str = "plain",
    threads: int = 1,
    metadata: dict | None = None,
) -> EvalReport:
    """Separate every track with ``separator`` and pool segment scores per source."""

    def one(pair: TrackPair):
        refs = [pair.source_clip(k) for k in range(len(source_names))]
        ests = separator(pair.mixture_clip())
        return score_sources(pair.name, refs, ests, source_names, segment_seconds, mode)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            per_track = list(pool.map(one, tracks))
    else:
        per_track = [one(p) for p in tracks]
    scores = [s for track_scores in per_track for s in track_scores]
    meta = {"mode": mode, "segment_seconds": segment_seconds, "aggregation": "pooled over all segments"}
    meta.update(metadata or {})
    return build_report(scores, source_names, meta)


def evaluate_dataset(
    params: ParameterSet,
    config: ModelConfig,
    test_index: DatasetIndex,
    segment_seconds: float = 1.0,
    mode: str = "plain",
    threads: int = 1,
    checkpoint_hash: str | None = None,
) -> EvalReport:
    """Separate and score every track of ``test_index``; failing tracks are logged and skipped."""
    names = list(config.source_names)
    if list(test_index.source_names) != names:
        raise UsageError(f"dataset sources {test_index.source_names} do not match model sources {names}")

    def one(entry):
        try:
            pair = load_track(entry, names, config.sample_rate, config.num_channels)
            refs = [pair.source_clip(k) for k in range(len(names))]
            ests = separate_track(params, config, pair.mixture_clip())
            return score_sources(entry.name, refs, ests, names, segment_seconds, mode), None
        except Exception as exc:  # noqa: BLE001 - reported per track
            log.error("track %s failed: %s", entry.name, exc)
            return [], f"{entry.name}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, test_index.tracks))
    else:
        results = [one(e) for e in test_index.tracks]
    scores = [s for r, _ in results for s in r]
    failures = [f for _, f in results if f]
    meta = {
        "mode": mode,
        "segment_seconds": segment_seconds,
        "aggregation": "pooled over all segments",
        "checkpoint_sha256": checkpoint_hash,
        "n_tracks": len(test_index.tracks),
    }
    return build_report(scores, names, meta, failures)
