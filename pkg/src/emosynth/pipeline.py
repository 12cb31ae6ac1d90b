"""End-to-end orchestration: ranker banks, strength extraction, TTS training.

These helpers wire the individual modules into the documented run order
(generate or load a corpus, train per-emotion rankers, extract strengths,
train the classifier and the acoustic model) and are shared by the CLI and
the verification suite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .acoustic import ModelConfig, TTSModel, build_model, train_step
from .classifier import ClassifierModel, TrainingConfig, train_classifier
from .conditioning import um_prior_mean
from .corpus import Utterance
from .features import aggregate_segment_features
from .ranker import (
    RankingModel,
    StrengthSequence,
    build_pairs,
    extract_strength_sequence,
    fit_normalizer,
    score,
    train_ranker,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankerSettings:
    C: float = 10.0
    tol: float = 1e-6
    max_iter: int = 50
    max_pairs: int = 5000
    seed: int = 0


def train_emotion_ranker(
    corpus: list[Utterance], emotion: int, neutral: int, settings: RankerSettings
) -> RankingModel:
    """Train one ranker (emotion vs neutral) and fit its strength normalizer.

    Ranking is learned from whole-utterance features; the normalizer is
    fitted on the syllable-level scores of the emotion's training utterances,
    which are the scores extraction will see.
    """
    emotional = [u for u in corpus if u.emotion == emotion]
    neutrals = [u for u in corpus if u.emotion == neutral]
    if not emotional or not neutrals:
        raise ValueError(f"need both emotion {emotion} and neutral {neutral} utterances")
    emo_feats = [aggregate_segment_features(u.mel) for u in emotional]
    neu_feats = [aggregate_segment_features(u.mel) for u in neutrals]
    pairs = build_pairs(emo_feats, neu_feats, settings.max_pairs, settings.seed + emotion)
    model = train_ranker(pairs, settings.C, settings.tol, settings.max_iter, emotion=emotion)
    syllable_scores = [
        score(model, aggregate_segment_features(u.mel, span))
        for u in emotional
        for span in u.syllables
    ]
    return fit_normalizer(model, syllable_scores)


def train_ranker_bank(
    corpus: list[Utterance],
    n_categories: int,
    neutral: int,
    settings: RankerSettings | None = None,
) -> dict[int, RankingModel]:
    settings = settings or RankerSettings()
    bank: dict[int, RankingModel] = {}
    for emotion in range(n_categories):
        if emotion == neutral:
            continue
        if not any(u.emotion == emotion for u in corpus):
            continue
        bank[emotion] = train_emotion_ranker(corpus, emotion, neutral, settings)
        log.info("trained ranker for emotion %d", emotion)
    return bank


def extract_corpus_strengths(
    corpus: list[Utterance], bank: dict[int, RankingModel], neutral: int
) -> dict[str, StrengthSequence]:
    """Strength sequences for every utterance; neutral gets zeros."""
    strengths: dict[str, StrengthSequence] = {}
    for utterance in corpus:
        if utterance.emotion == neutral:
            model = None
        elif utterance.emotion in bank:
            model = bank[utterance.emotion]
        else:
            raise ValueError(
                f"no ranker for emotion {utterance.emotion} (utterance {utterance.id})"
            )
        strengths[utterance.id] = extract_strength_sequence(model, utterance)
    return strengths


def train_text_classifier(
    corpus: list[Utterance], category_names: tuple[str, ...], seed: int = 0
) -> ClassifierModel:
    texts = [u.text for u in corpus]
    labels = [u.emotion for u in corpus]
    return train_classifier(texts, labels, category_names, TrainingConfig(seed=seed))


@dataclass(frozen=True)
class TrainingResult:
    model: TTSModel
    losses: list[dict[str, float]]
    prior_means: dict[int, torch.Tensor]


def train_tts(
    corpus: list[Utterance],
    strengths: dict[str, StrengthSequence],
    config: ModelConfig,
    steps: int,
    batch_size: int = 8,
    learning_rate: float = 1e-3,
    seed: int = 0,
    log_every: int = 50,
    cosine_decay: bool = True,
) -> TrainingResult:
    """Train the acoustic model for ``steps`` updates over shuffled batches.

    Deterministic for fixed seed and inputs. The learning rate follows a
    cosine decay to 5% of its initial value unless ``cosine_decay`` is off.
    After training, per-category utterance-variation prior means are computed
    for control-mode synthesis.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    missing = [u.id for u in corpus if u.id not in strengths]
    if missing:
        raise ValueError(f"no strength sequence for utterances: {missing[:5]}")
    model = build_model(config, seed=seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    cursor = 0
    losses: list[dict[str, float]] = []
    for step_idx in range(steps):
        if cosine_decay:
            scale = 0.05 + 0.475 * (1.0 + np.cos(np.pi * step_idx / steps))
            for group in optimizer.param_groups:
                group["lr"] = learning_rate * scale
        batch = []
        for _ in range(min(batch_size, len(corpus))):
            if cursor >= len(order):
                order = rng.permutation(len(corpus))
                cursor = 0
            utterance = corpus[order[cursor]]
            cursor += 1
            batch.append((utterance, strengths[utterance.id]))
        losses.append(train_step(batch, model, optimizer))
        if log_every and (step_idx + 1) % log_every == 0:
            log.info(
                "step %d: L_total=%.5f L_acoustic=%.5f",
                step_idx + 1,
                losses[-1]["L_total"],
                losses[-1]["L_acoustic"],
            )
    model.eval()
    prior_means = compute_prior_means(model, corpus)
    return TrainingResult(model=model, losses=losses, prior_means=prior_means)


def compute_prior_means(model: TTSModel, corpus: list[Utterance]) -> dict[int, torch.Tensor]:
    """Per-category mean utterance variation over the training corpus."""
    categories = sorted({u.emotion for u in corpus})
    return {c: um_prior_mean(model.um_encoder, corpus, c) for c in categories}
