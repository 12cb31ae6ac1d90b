"""Relative-attributes strength ranker trained by damped Newton iterations.

A linear ranking function r(f) = w.f is fitted from two kinds of pair
constraints built on segment features: ordered pairs (an emotional utterance
should outrank a neutral one) and similar pairs (two utterances from the same
set should score alike). With squared slacks the constrained program becomes
the smooth unconstrained objective

    J(w) = 0.5 ||w||^2 + C * sum_ordered max(0, 1 - w.d)^2
                       + C * sum_similar (w.d)^2

over difference vectors d, minimised here with damped Newton steps. Raw
scores are mapped to [0, 1] strengths with a per-emotion min/max normalizer
fitted on training scores.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import Utterance, expand_syllable_strengths
from .features import FeatureVector, aggregate_segment_features

RANKER_MAGIC = b"RANK"
RANKER_VERSION = 1
# magic, version, dim, C, emotion id, has-normalizer flag, score_min, score_max
_HEADER = struct.Struct("<4sIIdiBdd")


class RankerError(ValueError):
    """Raised for invalid pair sets, degenerate objectives, or misuse."""


@dataclass(frozen=True)
class PairSet:
    """Difference vectors for ordered (emotional - neutral) and similar pairs."""

    ordered: np.ndarray
    similar: np.ndarray

    def __post_init__(self) -> None:
        for name, arr in (("ordered", self.ordered), ("similar", self.similar)):
            if arr.ndim != 2:
                raise RankerError(f"{name} pairs must be a 2-D array")
        if self.ordered.shape[0] and self.similar.shape[0]:
            if self.ordered.shape[1] != self.similar.shape[1]:
                raise RankerError("ordered and similar pairs disagree on feature dimension")

    @property
    def dim(self) -> int:
        return self.ordered.shape[1] if self.ordered.size else self.similar.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.ordered.shape[0] + self.similar.shape[0]


@dataclass(frozen=True)
class RankingModel:
    """Weight vector plus trade-off constant and optional score normalizer."""

    w: np.ndarray
    C: float
    emotion: int
    score_min: float | None = None
    score_max: float | None = None

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.w)):
            raise RankerError("weight vector contains non-finite entries")
        if (self.score_min is None) != (self.score_max is None):
            raise RankerError("normalizer must set both score_min and score_max")
        if self.score_min is not None and self.score_min > self.score_max:
            raise RankerError("score_min exceeds score_max")

    @property
    def fitted(self) -> bool:
        return self.score_min is not None


@dataclass(frozen=True)
class StrengthSequence:
    """Per-syllable strengths in [0, 1], optionally expanded per phoneme."""

    per_syllable: np.ndarray
    per_phoneme: np.ndarray | None = None

    def __post_init__(self) -> None:
        for arr in (self.per_syllable, self.per_phoneme):
            if arr is not None and (arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0):
                raise RankerError("strengths must lie in [0, 1]")


def _sample_flat_indices(total: int, k: int, rng: np.random.Generator) -> np.ndarray:
    # uniform without replacement over a flat index space that may be huge
    if k >= total:
        return np.arange(total)
    if total <= 2_000_000:
        return rng.choice(total, size=k, replace=False)
    picked: set[int] = set()
    while len(picked) < k:
        picked.update(int(v) for v in rng.integers(0, total, size=k - len(picked)))
    return np.fromiter(sorted(picked), dtype=np.int64)


def _feature_values(f: FeatureVector | np.ndarray) -> np.ndarray:
    return f.values if isinstance(f, FeatureVector) else np.asarray(f, dtype=np.float64)


def _combination_from_index(idx: int, n: int) -> tuple[int, int]:
    # decode flat index into the (i, j) pair with i < j, row-major order
    i = 0
    remaining = idx
    row = n - 1
    while remaining >= row:
        remaining -= row
        i += 1
        row -= 1
    return i, i + 1 + remaining


def build_pairs(
    emotional_features: list[FeatureVector] | list[np.ndarray],
    neutral_features: list[FeatureVector] | list[np.ndarray],
    max_pairs: int = 5000,
    seed: int = 0,
) -> PairSet:
    """Sample ordered (E x N) and within-set similar difference vectors.

    Both pools are sampled uniformly without replacement, each capped at
    ``max_pairs``; sampling is deterministic for a fixed seed.
    """
    if max_pairs < 1:
        raise RankerError(f"max_pairs must be >= 1, got {max_pairs}")
    if not emotional_features or not neutral_features:
        raise RankerError("both feature sets must be non-empty")
    emo = np.stack([_feature_values(f) for f in emotional_features])
    neu = np.stack([_feature_values(f) for f in neutral_features])

    rng = np.random.default_rng(seed)
    n_e, n_n = len(emo), len(neu)
    idx = _sample_flat_indices(n_e * n_n, max_pairs, rng)
    ordered = emo[idx // n_n] - neu[idx % n_n]

    similar_chunks = []
    for block in (emo, neu):
        n = len(block)
        total = n * (n - 1) // 2
        if total == 0:
            continue
        for flat in _sample_flat_indices(total, max_pairs, rng):
            i, j = _combination_from_index(int(flat), n)
            similar_chunks.append(block[i] - block[j])
    if similar_chunks:
        similar = np.stack(similar_chunks)
        if len(similar) > max_pairs:
            keep = rng.choice(len(similar), size=max_pairs, replace=False)
            similar = similar[np.sort(keep)]
    else:
        similar = np.zeros((0, emo.shape[1]))
    return PairSet(ordered=ordered, similar=similar)


def ranking_objective(w: np.ndarray, pairs: PairSet, C: float) -> float:
    """The squared-slack objective J(w); also the oracle used in tests."""
    w = np.asarray(w, dtype=np.float64)
    j = 0.5 * float(w @ w)
    if pairs.ordered.size:
        margins = pairs.ordered @ w
        hinge = np.maximum(0.0, 1.0 - margins)
        j += C * float(hinge @ hinge)
    if pairs.similar.size:
        sims = pairs.similar @ w
        j += C * float(sims @ sims)
    return j


@dataclass(frozen=True)
class NewtonResult:
    w: np.ndarray
    objectives: tuple[float, ...]  # J at start plus after every accepted step
    converged: bool


def newton_minimize(pairs: PairSet, C: float, tol: float, max_iter: int) -> NewtonResult:
    """Minimise J(w) with damped Newton steps from w = 0.

    Each iteration solves (I + 2C * A_active^T A_active + 2C * S^T S) p = grad
    where the active set holds ordered pairs with margin below 1, then
    backtracks by halving until the objective strictly decreases. Iterations
    stop when the gradient norm drops below ``tol``. The objective is
    non-increasing across accepted steps by construction; a failed halving
    search terminates the optimisation at the current point.
    """
    if pairs.n_pairs == 0:
        raise RankerError("cannot train on zero pairs")
    if C <= 0:
        raise RankerError(f"C must be positive, got {C}")
    ordered = np.asarray(pairs.ordered, dtype=np.float64)
    similar = np.asarray(pairs.similar, dtype=np.float64)
    if not (np.all(np.isfinite(ordered)) and np.all(np.isfinite(similar))):
        raise RankerError("objective is non-finite; features are degenerate")
    dim = pairs.dim
    w = np.zeros(dim)
    j_current = ranking_objective(w, pairs, C)
    if not np.isfinite(j_current):
        raise RankerError("objective is non-finite; features are degenerate")
    objectives = [j_current]
    converged = False

    for _ in range(max_iter):
        grad = w.copy()
        hess = np.eye(dim)
        if ordered.size:
            margins = ordered @ w
            active = ordered[margins < 1.0]
            if active.size:
                grad -= 2.0 * C * ((1.0 - active @ w) @ active)
                hess += 2.0 * C * (active.T @ active)
        if similar.size:
            grad += 2.0 * C * ((similar @ w) @ similar)
            hess += 2.0 * C * (similar.T @ similar)
        if not np.all(np.isfinite(grad)):
            raise RankerError("gradient is non-finite; features are degenerate")
        if float(np.linalg.norm(grad)) < tol:
            converged = True
            break
        step = np.linalg.solve(hess, grad)
        t = 1.0
        accepted = False
        while t > 1e-12:
            candidate = w - t * step
            j_candidate = ranking_objective(candidate, pairs, C)
            if j_candidate < j_current:
                w, j_current = candidate, j_candidate
                objectives.append(j_current)
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
    return NewtonResult(w=w, objectives=tuple(objectives), converged=converged)


def train_ranker(
    pairs: PairSet,
    C: float = 10.0,
    tol: float = 1e-6,
    max_iter: int = 50,
    emotion: int = -1,
) -> RankingModel:
    """Fit the ranking weights by damped Newton; normalizer left unset."""
    result = newton_minimize(pairs, C, tol, max_iter)
    return RankingModel(w=result.w, C=float(C), emotion=emotion)


def score(model: RankingModel, f: FeatureVector | np.ndarray) -> float:
    """Raw ranking score w.f."""
    values = _feature_values(f)
    if values.shape != model.w.shape:
        raise RankerError(f"feature dim {values.shape} does not match weights {model.w.shape}")
    return float(model.w @ values)


def fit_normalizer(model: RankingModel, training_scores) -> RankingModel:
    """Store the min and max training score for [0, 1] normalization."""
    scores = np.asarray(training_scores, dtype=np.float64)
    if scores.size == 0:
        raise RankerError("cannot fit normalizer on empty score list")
    return replace(model, score_min=float(scores.min()), score_max=float(scores.max()))


def normalize(model: RankingModel, raw_score: float) -> float:
    """Map a raw score into [0, 1]; a degenerate normalizer yields 0.5."""
    if not model.fitted:
        raise RankerError("normalize called before fit_normalizer")
    if model.score_max == model.score_min:
        return 0.5
    value = (raw_score - model.score_min) / (model.score_max - model.score_min)
    return float(min(1.0, max(0.0, value)))


def extract_strength_sequence(
    model: RankingModel | None, utterance: Utterance
) -> StrengthSequence:
    """Per-syllable strengths from syllable-level features, expanded per phoneme.

    ``model`` is the fitted ranker for the utterance's emotion category;
    pass None for neutral utterances, which get strength 0 throughout.
    """
    if model is None:
        per_syllable = np.zeros(utterance.n_syllables)
    else:
        if not model.fitted:
            raise RankerError("ranking model has no fitted normalizer")
        if model.emotion >= 0 and model.emotion != utterance.emotion:
            raise RankerError(
                f"model for emotion {model.emotion} applied to utterance with emotion {utterance.emotion}"
            )
        per_syllable = np.array([
            normalize(model, score(model, aggregate_segment_features(utterance.mel, span)))
            for span in utterance.syllables
        ])
    per_phoneme = expand_syllable_strengths(per_syllable, utterance.syllables)
    return StrengthSequence(per_syllable=per_syllable, per_phoneme=per_phoneme)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_ranker(model: RankingModel, path: str | Path) -> None:
    """Binary record: magic, version, dim, C, emotion, normalizer, weights."""
    fitted = model.fitted
    header = _HEADER.pack(
        RANKER_MAGIC,
        RANKER_VERSION,
        len(model.w),
        model.C,
        model.emotion,
        1 if fitted else 0,
        model.score_min if fitted else 0.0,
        model.score_max if fitted else 0.0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(model.w, dtype="<f8").tobytes())


def load_ranker(path: str | Path) -> RankingModel:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise RankerError(f"{path}: truncated ranker file")
    magic, version, dim, c, emotion, has_norm, smin, smax = _HEADER.unpack_from(raw)
    if magic != RANKER_MAGIC:
        raise RankerError(f"{path}: bad magic {magic!r}")
    if version != RANKER_VERSION:
        raise RankerError(f"{path}: unsupported version {version}")
    if len(raw) < _HEADER.size + 8 * dim:
        raise RankerError(f"{path}: truncated ranker file")
    w = np.frombuffer(raw, dtype="<f8", count=dim, offset=_HEADER.size).astype(np.float64)
    return RankingModel(
        w=w,
        C=c,
        emotion=emotion,
        score_min=smin if has_norm else None,
        score_max=smax if has_norm else None,
    )


def export_ranker_text(model: RankingModel, path: str | Path) -> None:
    """Plain-text dump for inspection; not meant to be loaded back."""
    lines = [
        f"emotion={model.emotion}",
        f"C={model.C!r}",
        f"score_min={model.score_min!r}",
        f"score_max={model.score_max!r}",
        "w=" + " ".join(repr(float(v)) for v in model.w),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
