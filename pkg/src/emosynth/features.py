"""Fixed-dimension emotion-related features from mel segments.

Two per-frame tracks are derived from the mel matrix: an F0 proxy (channel 0)
and an energy proxy (log of the per-frame mean of exponentiated channels,
monotone in overall frame magnitude). A segment is summarised by six
statistics of each track, giving a 12-dimensional vector that feeds the
strength ranker at both syllable and whole-utterance level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .corpus import SyllableSpan

# mean, std, min, max, range, slope for each of the two tracks
FEATURE_DIM = 12


@dataclass(frozen=True)
class FrameTracks:
    f0_proxy: np.ndarray
    energy_proxy: np.ndarray


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    source_span: SyllableSpan | None = None

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature vector contains non-finite entries")


def frame_feature_tracks(mel: np.ndarray) -> FrameTracks:
    """Per-frame F0 and energy proxies; both have length == frame count."""
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[0] < 1:
        raise ValueError(f"mel must be a non-empty 2-D matrix, got shape {mel.shape}")
    if mel.shape[1] < 2:
        raise ValueError("mel must have at least 2 channels")
    f0 = mel[:, 0].copy()
    # log-mean-exp over channels, computed stably
    energy = logsumexp(mel, axis=1) - np.log(mel.shape[1])
    return FrameTracks(f0_proxy=f0, energy_proxy=energy)


def _least_squares_slope(values: np.ndarray) -> float:
    # OLS slope of value against frame index; a single frame has no trend
    n = len(values)
    if n < 2:
        return 0.0
    t = np.arange(n, dtype=np.float64)
    t_centered = t - t.mean()
    return float(t_centered @ (values - values.mean()) / (t_centered @ t_centered))


def _track_stats(values: np.ndarray) -> list[float]:
    return [
        float(values.mean()),
        float(values.std()),
        float(values.min()),
        float(values.max()),
        float(values.max() - values.min()),
        _least_squares_slope(values),
    ]


def aggregate_segment_features(
    mel: np.ndarray, span: SyllableSpan | None = None
) -> FeatureVector:
    """Summarise a frame span (or the whole utterance when span is None).

    Returns mean, std, min, max, range, and least-squares slope of the F0
    proxy followed by the same six statistics of the energy proxy.
    """
    mel = np.asarray(mel, dtype=np.float64)
    if span is not None:
        if span.frame_start < 0 or span.frame_end >= mel.shape[0]:
            raise ValueError(
                f"span frames [{span.frame_start}, {span.frame_end}] outside mel with {mel.shape[0]} frames"
            )
        segment = mel[span.frame_start : span.frame_end + 1]
    else:
        segment = mel
    tracks = frame_feature_tracks(segment)
    values = np.array(_track_stats(tracks.f0_proxy) + _track_stats(tracks.energy_proxy))
    return FeatureVector(values=values, source_span=span)
