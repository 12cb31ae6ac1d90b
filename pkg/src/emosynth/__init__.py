"""Desk-scale multi-scale emotional speech synthesis in the mel domain.

The package learns per-syllable emotion strengths with a relative-attributes
ranker, conditions a toy attention-based seq2seq acoustic model on global,
utterance, and local emotion representations, and supports three synthesis
modes: transfer from a reference signal, prediction from text, and manual
strength control. Everything runs on CPU against a synthetic corpus with
known latent strengths.
"""

__version__ = "0.1.0"

from .acoustic import ModelConfig, SynthesisResult, TTSModel, build_model, synthesize_mel
from .classifier import ClassifierModel, EmotionPosterior, predict_posterior, train_classifier
from .conditioning import ConditioningBundle, gm_embed, um_prior_mean
from .corpus import (
    CorpusManifest,
    PhonemeSequence,
    SyllableSpan,
    SyntheticConfig,
    Utterance,
    expand_syllable_strengths,
    generate_synthetic_corpus,
    load_manifest,
)
from .evaluate import MCDReport, f0_proxy_curve, mcd_dtw
from .features import FeatureVector, aggregate_segment_features, frame_feature_tracks
from .inference import StrengthSpec, interpolate_strengths, synth_control, synth_predict, synth_transfer
from .ranker import (
    PairSet,
    RankingModel,
    StrengthSequence,
    build_pairs,
    extract_strength_sequence,
    normalize,
    score,
    train_ranker,
)

__all__ = [
    "ModelConfig",
    "SynthesisResult",
    "TTSModel",
    "build_model",
    "synthesize_mel",
    "ClassifierModel",
    "EmotionPosterior",
    "predict_posterior",
    "train_classifier",
    "ConditioningBundle",
    "gm_embed",
    "um_prior_mean",
    "CorpusManifest",
    "PhonemeSequence",
    "SyllableSpan",
    "SyntheticConfig",
    "Utterance",
    "expand_syllable_strengths",
    "generate_synthetic_corpus",
    "load_manifest",
    "MCDReport",
    "f0_proxy_curve",
    "mcd_dtw",
    "FeatureVector",
    "aggregate_segment_features",
    "frame_feature_tracks",
    "StrengthSpec",
    "interpolate_strengths",
    "synth_control",
    "synth_predict",
    "synth_transfer",
    "PairSet",
    "RankingModel",
    "StrengthSequence",
    "build_pairs",
    "extract_strength_sequence",
    "normalize",
    "score",
    "train_ranker",
]
