"""The three synthesis modes: transfer, prediction, and manual control.

Each mode assembles a ConditioningBundle from a different source and hands
it to the acoustic decoder. Transfer reads everything from a reference
utterance (with linear interpolation of its strength sequence when syllable
counts differ), prediction derives everything from the input text, and
control takes a category plus an explicit strength specification, filling
the utterance variation from a training-prior mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .acoustic import AcousticError, SynthesisResult, TTSModel, synthesize_mel
from .classifier import ClassifierModel, EmotionPosterior, predict_posterior
from .conditioning import ConditioningBundle, gm_embed
from .corpus import PhonemeSequence, SyllableSpan, Utterance, expand_syllable_strengths
from .ranker import RankingModel, extract_strength_sequence

SPEC_KINDS = ("constant", "ramp_up", "ramp_down", "explicit", "from_reference")


@dataclass(frozen=True)
class StrengthSpec:
    """Manual strength request: a constant, a ramp, or an explicit sequence."""

    kind: str
    values: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in SPEC_KINDS:
            raise ValueError(f"unknown strength spec kind {self.kind!r}")
        if any(not 0.0 <= v <= 1.0 for v in self.values):
            raise ValueError("strength values must lie in [0, 1]")

    @classmethod
    def constant(cls, value: float) -> "StrengthSpec":
        return cls(kind="constant", values=(value,))

    @classmethod
    def ramp_up(cls) -> "StrengthSpec":
        return cls(kind="ramp_up")

    @classmethod
    def ramp_down(cls) -> "StrengthSpec":
        return cls(kind="ramp_down")

    @classmethod
    def explicit(cls, values) -> "StrengthSpec":
        return cls(kind="explicit", values=tuple(float(v) for v in values))

    def materialize(self, n_syllables: int) -> np.ndarray:
        if n_syllables < 1:
            raise ValueError("target must have at least one syllable")
        if self.kind == "constant":
            return np.full(n_syllables, self.values[0])
        if self.kind == "ramp_up":
            return np.linspace(0.0, 1.0, n_syllables)
        if self.kind == "ramp_down":
            return np.linspace(1.0, 0.0, n_syllables)
        if self.kind == "explicit":
            if len(self.values) != n_syllables:
                raise ValueError(
                    f"explicit spec has {len(self.values)} values for {n_syllables} syllables"
                )
            return np.array(self.values)
        raise ValueError("from_reference specs are resolved by the transfer mode")


def interpolate_strengths(source, target_len: int) -> np.ndarray:
    """Piecewise-linear resampling of a strength sequence to a new length.

    Source values are treated as samples at equally spaced points on [0, 1];
    endpoints are preserved and a single-value source extends as a constant.
    """
    source = np.asarray(source, dtype=np.float64)
    if source.ndim != 1 or source.size < 1:
        raise ValueError("source strengths must be a non-empty sequence")
    if target_len < 1:
        raise ValueError(f"target_len must be >= 1, got {target_len}")
    if source.size == target_len:
        return source.copy()
    if source.size == 1:
        return np.full(target_len, source[0])
    return np.interp(
        np.linspace(0.0, 1.0, target_len),
        np.linspace(0.0, 1.0, source.size),
        source,
    )


def _phoneme_tensor(phonemes: PhonemeSequence) -> torch.Tensor:
    return torch.tensor(phonemes.ids, dtype=torch.long)


def _local_embedding(model: TTSModel, per_syllable: np.ndarray, syllables) -> torch.Tensor:
    per_phoneme = expand_syllable_strengths(per_syllable, tuple(syllables))
    return model.lm_projection(torch.as_tensor(per_phoneme, dtype=model.dtype))


def synth_transfer(
    model: TTSModel,
    phonemes: PhonemeSequence,
    syllables: tuple[SyllableSpan, ...],
    reference: Utterance,
    ranker: RankingModel | None,
    max_steps: int | None = None,
) -> SynthesisResult:
    """Synthesize with category, variation, and strengths from a reference.

    ``ranker`` is the fitted strength ranker for the reference's emotion
    category (None for a neutral reference). Non-parallel references are
    handled by linear interpolation of the per-syllable strength sequence.
    """
    ref_strengths = extract_strength_sequence(ranker, reference).per_syllable
    per_syllable = interpolate_strengths(ref_strengths, len(syllables))
    model.eval()
    with torch.no_grad():
        posterior = EmotionPosterior.one_hot(reference.emotion, model.config.n_categories)
        ref_mel = torch.tensor(np.asarray(reference.mel), dtype=model.dtype)
        bundle = ConditioningBundle(
            h_global=gm_embed(model.gm_table, posterior),
            h_utt=model.um_encoder(ref_mel),
            h_local=_local_embedding(model, per_syllable, syllables),
        )
    return synthesize_mel(model, _phoneme_tensor(phonemes), bundle, max_steps=max_steps)


def synth_predict(
    model: TTSModel,
    text: str,
    phonemes: PhonemeSequence,
    classifier: ClassifierModel,
    max_steps: int | None = None,
) -> SynthesisResult:
    """Synthesize with every conditioning stream predicted from text."""
    if classifier.n_categories != model.config.n_categories:
        raise AcousticError("classifier and model disagree on category count")
    posterior = predict_posterior(classifier, text)
    model.eval()
    with torch.no_grad():
        encodings = model.encode_text(_phoneme_tensor(phonemes))
        strengths = model.lm_predictor(encodings)
        bundle = ConditioningBundle(
            h_global=gm_embed(model.gm_table, posterior),
            h_utt=model.um_predictor(encodings),
            h_local=model.lm_projection(strengths),
        )
    return synthesize_mel(model, _phoneme_tensor(phonemes), bundle, max_steps=max_steps)


def synth_control(
    model: TTSModel,
    phonemes: PhonemeSequence,
    syllables: tuple[SyllableSpan, ...],
    category: int,
    spec: StrengthSpec,
    prior_mean: torch.Tensor,
    h_utt_override: torch.Tensor | None = None,
    max_steps: int | None = None,
) -> SynthesisResult:
    """Synthesize with a manual category and strength specification.

    The utterance variation comes from the training prior mean for the
    category (``prior_mean``) unless an explicit override is supplied.
    """
    if not 0 <= category < model.config.n_categories:
        raise AcousticError(f"category {category} outside model range")
    per_syllable = spec.materialize(len(syllables))
    model.eval()
    with torch.no_grad():
        posterior = EmotionPosterior.one_hot(category, model.config.n_categories)
        h_utt = h_utt_override if h_utt_override is not None else prior_mean
        bundle = ConditioningBundle(
            h_global=gm_embed(model.gm_table, posterior),
            h_utt=h_utt.to(model.dtype),
            h_local=_local_embedding(model, per_syllable, syllables),
        )
    return synthesize_mel(model, _phoneme_tensor(phonemes), bundle, max_steps=max_steps)
