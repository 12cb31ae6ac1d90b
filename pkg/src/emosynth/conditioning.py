"""Three-level emotion conditioning: global embedding, utterance variation,
and local strength projection, plus the text-based predictors for the latter
two and their auxiliary losses.

The global embedding is a trainable lookup over emotion categories; at
inference it can be blended by a classifier posterior (soft embedding). The
utterance variation encoder pools a mel matrix into a fixed vector; a
convolutional predictor learns to regress that vector from text encodings.
Local strengths enter through one shared affine map per scalar strength; a
second predictor regresses per-position strengths from text encodings.

Both auxiliary losses treat their supervision targets as constants, and the
training loop feeds the predictors detached text encodings, so these losses
move predictor parameters only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .classifier import EmotionPosterior
from .corpus import Utterance


@dataclass(frozen=True)
class ConditioningBundle:
    """(h_global, h_utt, h_local) fed to the acoustic model."""

    h_global: torch.Tensor  # (d_g,)
    h_utt: torch.Tensor  # (d_u,)
    h_local: torch.Tensor  # (T, d_l)


class GlobalEmbeddingTable(nn.Module):
    """Trainable per-category emotion embeddings."""

    def __init__(self, n_categories: int, dim: int):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(n_categories, dim) * 0.1)

    @property
    def n_categories(self) -> int:
        return self.weight.shape[0]

    def forward(self, category: int) -> torch.Tensor:
        return self.weight[category]


def gm_embed(table: GlobalEmbeddingTable, posterior: EmotionPosterior | torch.Tensor) -> torch.Tensor:
    """Posterior-weighted mixture of category embeddings.

    A one-hot posterior reproduces the plain row lookup used in training;
    the result is linear in the posterior.
    """
    if isinstance(posterior, EmotionPosterior):
        probs = torch.as_tensor(posterior.probs, dtype=table.weight.dtype)
    else:
        probs = posterior.to(table.weight.dtype)
        if torch.any(probs < 0) or abs(float(probs.sum()) - 1.0) > 1e-6:
            raise ValueError("invalid posterior")
    if probs.shape[0] != table.n_categories:
        raise ValueError(
            f"posterior has {probs.shape[0]} entries, table has {table.n_categories} categories"
        )
    return probs @ table.weight


class UtteranceVariationEncoder(nn.Module):
    """Mel frames -> fixed utterance-variation vector.

    Two 1-d convolutions, each followed by layer normalization and dropout,
    then mean pooling over the time axis. Deterministic in eval mode.
    """

    def __init__(self, mel_bins: int, dim: int, channels: int = 64, kernel: int = 5, dropout: float = 0.1):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv1d(mel_bins, channels, kernel, padding=pad)
        self.norm1 = nn.LayerNorm(channels)
        self.conv2 = nn.Conv1d(channels, dim, kernel, padding=pad)
        self.norm2 = nn.LayerNorm(dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        if mel.ndim != 2 or mel.shape[0] < 1:
            raise ValueError(f"mel must be (frames, bins) with frames >= 1, got {tuple(mel.shape)}")
        x = mel.T.unsqueeze(0)  # (1, bins, frames)
        x = torch.relu(self.conv1(x))
        x = self.dropout(self.norm1(x.transpose(1, 2)).transpose(1, 2))
        x = torch.relu(self.conv2(x))
        x = self.dropout(self.norm2(x.transpose(1, 2)).transpose(1, 2))
        return x.mean(dim=2).squeeze(0)  # (dim,)


class VariationPredictor(nn.Module):
    """Text encodings -> predicted utterance-variation vector.

    One 1-d convolution with ReLU and layer normalization, mean pooling over
    time, then two fully connected layers.
    """

    def __init__(self, d_enc: int, dim: int, channels: int = 64, kernel: int = 5, dropout: float = 0.1):
        super().__init__()
        self.conv = nn.Conv1d(d_enc, channels, kernel, padding=kernel // 2)
        self.norm = nn.LayerNorm(channels)
        self.dropout = nn.Dropout(dropout)
        self.fc1 = nn.Linear(channels, channels)
        self.fc2 = nn.Linear(channels, dim)

    def forward(self, text_encodings: torch.Tensor) -> torch.Tensor:
        if text_encodings.ndim != 2 or text_encodings.shape[0] < 1:
            raise ValueError("text encodings must be (T, d_enc) with T >= 1")
        x = text_encodings.T.unsqueeze(0)  # (1, d_enc, T)
        x = torch.relu(self.conv(x))
        x = self.dropout(self.norm(x.transpose(1, 2)).transpose(1, 2))
        x = x.mean(dim=2).squeeze(0)
        return self.fc2(torch.relu(self.fc1(x)))


class LocalStrengthProjection(nn.Module):
    """One shared affine map from a scalar strength to a d_l row."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(1, dim)

    def forward(self, per_phoneme_strengths: torch.Tensor) -> torch.Tensor:
        s = per_phoneme_strengths
        if s.ndim != 1:
            raise ValueError("strengths must be a 1-D sequence")
        if torch.any(s < 0) or torch.any(s > 1):
            raise ValueError("strengths must lie in [0, 1]")
        return self.proj(s.unsqueeze(1))  # (T, dim)


class LocalStrengthPredictor(nn.Module):
    """Text encodings -> per-position strengths in [0, 1].

    Same convolutional trunk as the utterance variation encoder, without the
    time pooling, finished by a per-position logistic unit.
    """

    def __init__(self, d_enc: int, channels: int = 64, kernel: int = 5, dropout: float = 0.1):
        super().__init__()
        pad = kernel // 2
        self.conv1 = nn.Conv1d(d_enc, channels, kernel, padding=pad)
        self.norm1 = nn.LayerNorm(channels)
        self.conv2 = nn.Conv1d(channels, channels, kernel, padding=pad)
        self.norm2 = nn.LayerNorm(channels)
        self.dropout = nn.Dropout(dropout)
        self.out = nn.Conv1d(channels, 1, 1)

    def forward(self, text_encodings: torch.Tensor) -> torch.Tensor:
        if text_encodings.ndim != 2 or text_encodings.shape[0] < 1:
            raise ValueError("text encodings must be (T, d_enc) with T >= 1")
        x = text_encodings.T.unsqueeze(0)
        x = torch.relu(self.conv1(x))
        x = self.dropout(self.norm1(x.transpose(1, 2)).transpose(1, 2))
        x = torch.relu(self.conv2(x))
        x = self.dropout(self.norm2(x.transpose(1, 2)).transpose(1, 2))
        return torch.sigmoid(self.out(x)).squeeze(1).squeeze(0)  # (T,)


def um_loss(h_utt: torch.Tensor, h_utt_pred: torch.Tensor) -> torch.Tensor:
    """Squared Euclidean distance; the target branch carries no gradient."""
    if h_utt.shape != h_utt_pred.shape:
        raise ValueError(f"shape mismatch {tuple(h_utt.shape)} vs {tuple(h_utt_pred.shape)}")
    diff = h_utt.detach() - h_utt_pred
    return (diff * diff).sum()


def lm_loss(strengths: torch.Tensor, strengths_pred: torch.Tensor) -> torch.Tensor:
    """Squared Euclidean distance between strength sequences, target constant."""
    if strengths.shape != strengths_pred.shape:
        raise ValueError(f"length mismatch {tuple(strengths.shape)} vs {tuple(strengths_pred.shape)}")
    diff = strengths.detach() - strengths_pred
    return (diff * diff).sum()


def um_prior_mean(
    encoder: UtteranceVariationEncoder,
    corpus: list[Utterance],
    category: int | None = None,
) -> torch.Tensor:
    """Elementwise mean of um_encode over the selection (one category or all)."""
    selected = [u for u in corpus if category is None or u.emotion == category]
    if not selected:
        raise ValueError(f"no utterances selected for category {category}")
    was_training = encoder.training
    encoder.eval()
    dtype = next(encoder.parameters()).dtype
    with torch.no_grad():
        encodings = [
            encoder(torch.tensor(np.asarray(u.mel), dtype=dtype)) for u in selected
        ]
    if was_training:
        encoder.train()
    return torch.stack(encodings).mean(dim=0)
