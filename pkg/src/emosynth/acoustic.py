"""Toy attention-based seq2seq acoustic model.

A phoneme encoder (embedding, convolutions, BiGRU) produces text encodings
that are concatenated with the three conditioning streams; an autoregressive
decoder with GMM attention reconstructs mel frames via teacher forcing. The
attention mixture means advance by a softplus delta at every step, so the
alignment is monotone by construction.

The composite training loss is

    L_total = L_acoustic + lambda_local * L_local + lambda_utt * L_utt

where L_acoustic is the mel reconstruction MSE plus the stop-token binary
cross entropy, and the two auxiliary losses train only the text-based
predictors: their supervision targets are detached and they consume text
encodings through a gradient barrier.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .conditioning import (
    ConditioningBundle,
    GlobalEmbeddingTable,
    LocalStrengthPredictor,
    LocalStrengthProjection,
    UtteranceVariationEncoder,
    VariationPredictor,
    lm_loss,
    um_loss,
)
from .corpus import Utterance
from .ranker import StrengthSequence

CHECKPOINT_VERSION = 1


class AcousticError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 40
    mel_bins: int = 20
    n_categories: int = 7
    d_enc: int = 128
    d_dec: int = 256
    attn_mixtures: int = 3
    d_g: int = 64
    d_u: int = 64
    d_l: int = 64
    lambda_local: float = 1.0
    lambda_utt: float = 1.0
    dropout: float = 0.1
    prenet_dim: int = 64
    cond_channels: int = 64
    cond_kernel: int = 5
    max_decode_steps: int = 1000

    def __post_init__(self) -> None:
        positive = (
            self.vocab_size, self.mel_bins, self.n_categories, self.d_enc,
            self.d_dec, self.attn_mixtures, self.d_g, self.d_u, self.d_l,
            self.prenet_dim, self.cond_channels, self.cond_kernel,
            self.max_decode_steps,
        )
        if any(v < 1 for v in positive):
            raise AcousticError("all model dimensions must be positive")
        if self.lambda_local < 0 or self.lambda_utt < 0:
            raise AcousticError("loss weights must be non-negative")
        if self.d_enc % 2 != 0:
            raise AcousticError("d_enc must be even (bidirectional encoder)")

    @property
    def d_cond(self) -> int:
        return self.d_enc + self.d_l + self.d_g + self.d_u


def gmm_mixture_weights(
    mu: torch.Tensor, sigma: torch.Tensor, mixture_weights: torch.Tensor, memory_length: int
) -> torch.Tensor:
    """Evaluate a_j = sum_k pi_k * N(j; mu_k, sigma_k^2) at j = 0..L-1."""
    positions = torch.arange(memory_length, dtype=mu.dtype).unsqueeze(0)  # (1, L)
    z = sigma * math.sqrt(2.0 * math.pi)
    density = torch.exp(-0.5 * ((positions - mu.unsqueeze(1)) / sigma.unsqueeze(1)) ** 2)
    return (mixture_weights.unsqueeze(1) / z.unsqueeze(1) * density).sum(dim=0)  # (L,)


class GMMAttention(nn.Module):
    """Monotone GMM attention: means only ever advance.

    The query is mapped to per-mixture (weight, delta, sigma) pre-activations;
    softmax / softplus keep weights on the simplex and delta and sigma
    positive. New means are mu_prev + softplus(delta).
    """

    # softplus inverses of the initial step size (1.0) and width (1.5)
    DELTA_BIAS = 0.5413
    SIGMA_BIAS = 1.2480

    def __init__(self, query_dim: int, n_mixtures: int, hidden: int = 128):
        super().__init__()
        self.n_mixtures = n_mixtures
        self.query_layer = nn.Linear(query_dim, hidden)
        self.param_layer = nn.Linear(hidden, 3 * n_mixtures)
        with torch.no_grad():
            self.param_layer.bias[n_mixtures : 2 * n_mixtures] = self.DELTA_BIAS
            self.param_layer.bias[2 * n_mixtures :] = self.SIGMA_BIAS

    def initial_means(self, dtype: torch.dtype) -> torch.Tensor:
        # start just left of the memory so the first advance lands near 0
        return torch.full((self.n_mixtures,), -1.0, dtype=dtype)

    def forward(
        self, query: torch.Tensor, mu_prev: torch.Tensor, memory: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        params = self.param_layer(torch.tanh(self.query_layer(query)))
        w_hat, delta_hat, sigma_hat = params.chunk(3)
        pi = torch.softmax(w_hat, dim=0)
        mu = mu_prev + nn.functional.softplus(delta_hat)
        sigma = nn.functional.softplus(sigma_hat) + 1e-4
        weights = gmm_mixture_weights(mu, sigma, pi, memory.shape[0])
        context = weights @ memory
        return context, weights, mu


class TextEncoder(nn.Module):
    """Phoneme embedding, two convolutions, and a bidirectional GRU."""

    def __init__(self, vocab_size: int, d_enc: int, kernel: int = 5, dropout: float = 0.1):
        super().__init__()
        pad = kernel // 2
        self.embedding = nn.Embedding(vocab_size, d_enc)
        self.conv1 = nn.Conv1d(d_enc, d_enc, kernel, padding=pad)
        self.norm1 = nn.LayerNorm(d_enc)
        self.conv2 = nn.Conv1d(d_enc, d_enc, kernel, padding=pad)
        self.norm2 = nn.LayerNorm(d_enc)
        self.dropout = nn.Dropout(dropout)
        self.gru = nn.GRU(d_enc, d_enc // 2, bidirectional=True, batch_first=True)

    def forward(self, phoneme_ids: torch.Tensor) -> torch.Tensor:
        x = self.embedding(phoneme_ids).T.unsqueeze(0)  # (1, d_enc, T)
        x = torch.relu(self.conv1(x))
        x = self.dropout(self.norm1(x.transpose(1, 2)).transpose(1, 2))
        x = torch.relu(self.conv2(x))
        x = self.dropout(self.norm2(x.transpose(1, 2)).transpose(1, 2))
        out, _ = self.gru(x.transpose(1, 2))  # (1, T, d_enc)
        return out.squeeze(0)


@dataclass
class DecoderState:
    att_hidden: torch.Tensor
    att_cell: torch.Tensor
    dec_hidden: torch.Tensor
    dec_cell: torch.Tensor
    context: torch.Tensor
    attention_means: torch.Tensor


@dataclass(frozen=True)
class SynthesisResult:
    """Decoded mel frames plus stop bookkeeping and attention trace."""

    mel: np.ndarray
    stop_step: int
    stopped: bool
    attention_means: np.ndarray  # (steps, n_mixtures)


class TTSModel(nn.Module):
    """Encoder, GMM attention, decoder, and all conditioning submodules."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.text_encoder = TextEncoder(
            config.vocab_size, config.d_enc, dropout=config.dropout
        )
        self.gm_table = GlobalEmbeddingTable(config.n_categories, config.d_g)
        self.um_encoder = UtteranceVariationEncoder(
            config.mel_bins, config.d_u, config.cond_channels, config.cond_kernel, config.dropout
        )
        self.um_predictor = VariationPredictor(
            config.d_enc, config.d_u, config.cond_channels, config.cond_kernel, config.dropout
        )
        self.lm_projection = LocalStrengthProjection(config.d_l)
        self.lm_predictor = LocalStrengthPredictor(
            config.d_enc, config.cond_channels, config.cond_kernel, config.dropout
        )
        self.attention = GMMAttention(config.d_dec, config.attn_mixtures)
        self.prenet = nn.Sequential(
            nn.Linear(config.mel_bins, config.prenet_dim),
            nn.ReLU(),
            nn.Dropout(config.dropout),
            nn.Linear(config.prenet_dim, config.prenet_dim),
            nn.ReLU(),
            nn.Dropout(config.dropout),
        )
        self.attention_rnn = nn.LSTMCell(config.prenet_dim + config.d_cond, config.d_dec)
        self.decoder_rnn = nn.LSTMCell(config.d_dec + config.d_cond, config.d_dec)
        self.mel_out = nn.Linear(config.d_dec + config.d_cond, config.mel_bins)
        self.stop_out = nn.Linear(config.d_dec + config.d_cond, 1)
        with torch.no_grad():
            # stop targets are almost all zero; bias the logit accordingly
            self.stop_out.bias.fill_(-2.0)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def encode_text(self, phoneme_ids: torch.Tensor) -> torch.Tensor:
        if torch.any(phoneme_ids < 0) or torch.any(phoneme_ids >= self.config.vocab_size):
            raise AcousticError("phoneme id outside model vocabulary")
        return self.text_encoder(phoneme_ids)

    def encode_and_condition(
        self, phoneme_ids: torch.Tensor, bundle: ConditioningBundle
    ) -> torch.Tensor:
        """Text encodings with h_local per position and h_global/h_utt broadcast."""
        encodings = self.encode_text(phoneme_ids)
        return self.condition_encodings(encodings, bundle)

    def condition_encodings(
        self, encodings: torch.Tensor, bundle: ConditioningBundle
    ) -> torch.Tensor:
        t = encodings.shape[0]
        cfg = self.config
        if bundle.h_global.shape != (cfg.d_g,):
            raise AcousticError(f"h_global must have shape ({cfg.d_g},)")
        if bundle.h_utt.shape != (cfg.d_u,):
            raise AcousticError(f"h_utt must have shape ({cfg.d_u},)")
        if bundle.h_local.shape != (t, cfg.d_l):
            raise AcousticError(f"h_local must have shape ({t}, {cfg.d_l})")
        return torch.cat(
            [
                encodings,
                bundle.h_local,
                bundle.h_global.unsqueeze(0).expand(t, -1),
                bundle.h_utt.unsqueeze(0).expand(t, -1),
            ],
            dim=1,
        )

    # ------------------------------------------------------------------
    # Decoding
    # ------------------------------------------------------------------

    def initial_decoder_state(self) -> DecoderState:
        cfg = self.config
        dtype = self.dtype
        zeros = lambda n: torch.zeros(1, n, dtype=dtype)  # noqa: E731
        return DecoderState(
            att_hidden=zeros(cfg.d_dec),
            att_cell=zeros(cfg.d_dec),
            dec_hidden=zeros(cfg.d_dec),
            dec_cell=zeros(cfg.d_dec),
            context=torch.zeros(cfg.d_cond, dtype=dtype),
            attention_means=self.attention.initial_means(dtype),
        )

    def decode_step(
        self, prev_frame: torch.Tensor, state: DecoderState, memory: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, DecoderState]:
        return self._step_from_prenet(self.prenet(prev_frame), state, memory)

    def _step_from_prenet(
        self, pre: torch.Tensor, state: DecoderState, memory: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor, DecoderState]:
        att_in = torch.cat([pre, state.context]).unsqueeze(0)
        att_hidden, att_cell = self.attention_rnn(att_in, (state.att_hidden, state.att_cell))
        context, _, mu = self.attention(att_hidden.squeeze(0), state.attention_means, memory)
        dec_in = torch.cat([att_hidden.squeeze(0), context]).unsqueeze(0)
        dec_hidden, dec_cell = self.decoder_rnn(dec_in, (state.dec_hidden, state.dec_cell))
        out_in = torch.cat([dec_hidden.squeeze(0), context])
        frame = self.mel_out(out_in)
        stop_logit = self.stop_out(out_in).squeeze(0)
        new_state = DecoderState(att_hidden, att_cell, dec_hidden, dec_cell, context, mu)
        return frame, stop_logit, new_state

    def decode_teacher(
        self, memory: torch.Tensor, target: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Teacher-forced decode; returns predicted frames and stop logits."""
        state = self.initial_decoder_state()
        # teacher-forced prenet inputs are known up front: a zero go-frame
        # followed by the ground-truth frames, so run the prenet in one shot
        prev_frames = torch.cat(
            [torch.zeros(1, self.config.mel_bins, dtype=self.dtype), target[:-1]]
        )
        pre_all = self.prenet(prev_frames)
        frames, stop_logits = [], []
        for t in range(target.shape[0]):
            frame, stop_logit, state = self._step_from_prenet(pre_all[t], state, memory)
            frames.append(frame)
            stop_logits.append(stop_logit)
        return torch.stack(frames), torch.stack(stop_logits)


def build_model(config: ModelConfig, seed: int = 0) -> TTSModel:
    """Construct a model with seed-deterministic initialization."""
    torch.manual_seed(seed)
    return TTSModel(config)


def synthesize_mel(
    model: TTSModel,
    phoneme_ids: torch.Tensor,
    bundle: ConditioningBundle,
    max_steps: int | None = None,
) -> SynthesisResult:
    """Free-running decode until the stop probability exceeds 0.5.

    Runs in evaluation mode (deterministic); a max-step overrun returns the
    partial output with ``stopped=False``.
    """
    max_steps = max_steps or model.config.max_decode_steps
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            memory = model.encode_and_condition(phoneme_ids, bundle)
            state = model.initial_decoder_state()
            prev = torch.zeros(model.config.mel_bins, dtype=model.dtype)
            frames, means = [], []
            stopped = False
            for _ in range(max_steps):
                frame, stop_logit, state = model.decode_step(prev, state, memory)
                frames.append(frame)
                means.append(state.attention_means)
                prev = frame
                if torch.sigmoid(stop_logit) > 0.5:
                    stopped = True
                    break
    finally:
        if was_training:
            model.train()
    mel = torch.stack(frames).to(torch.float32).numpy()
    return SynthesisResult(
        mel=mel,
        stop_step=len(frames),
        stopped=stopped,
        attention_means=torch.stack(means).to(torch.float64).numpy(),
    )


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _utterance_losses(
    model: TTSModel, utterance: Utterance, strengths: StrengthSequence
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    dtype = model.dtype
    phon = torch.tensor(utterance.phonemes.ids, dtype=torch.long)
    target = torch.tensor(np.asarray(utterance.mel), dtype=dtype)
    if strengths.per_phoneme is None or len(strengths.per_phoneme) != len(utterance.phonemes):
        raise AcousticError("strength sequence must be phoneme-expanded to length T")

    encodings = model.encode_text(phon)
    h_global = model.gm_table(utterance.emotion)
    h_utt = model.um_encoder(target)
    s_phon = torch.as_tensor(strengths.per_phoneme, dtype=dtype)
    h_local = model.lm_projection(s_phon)
    memory = model.condition_encodings(
        encodings, ConditioningBundle(h_global=h_global, h_utt=h_utt, h_local=h_local)
    )
    pred, stop_logits = model.decode_teacher(memory, target)
    stop_target = torch.zeros(target.shape[0], dtype=dtype)
    stop_target[-1] = 1.0
    l_acoustic = nn.functional.mse_loss(pred, target) + nn.functional.binary_cross_entropy_with_logits(
        stop_logits, stop_target
    )

    # gradient barrier: predictor losses must not move the text encoder
    barrier = encodings.detach()
    l_utt = um_loss(h_utt, model.um_predictor(barrier))
    l_local = lm_loss(s_phon, model.lm_predictor(barrier))
    return l_acoustic, l_local, l_utt


def train_step(
    batch: list[tuple[Utterance, StrengthSequence]],
    model: TTSModel,
    optimizer: torch.optim.Optimizer,
) -> dict[str, float]:
    """One gradient update over a batch; returns the loss decomposition.

    The reported total satisfies
    L_total = L_acoustic + lambda_local * L_local + lambda_utt * L_utt.
    """
    if not batch:
        raise AcousticError("empty batch")
    model.train()
    n = len(batch)
    l_acoustic = l_local = l_utt = 0.0
    for utterance, strengths in batch:
        a, l, u = _utterance_losses(model, utterance, strengths)
        l_acoustic = l_acoustic + a / n
        l_local = l_local + l / n
        l_utt = l_utt + u / n
    l_total = l_acoustic + model.config.lambda_local * l_local + model.config.lambda_utt * l_utt
    if not torch.isfinite(l_total):
        raise AcousticError(
            "non-finite loss: "
            f"acoustic={float(l_acoustic.detach())}, local={float(l_local.detach())}, "
            f"utt={float(l_utt.detach())}"
        )
    optimizer.zero_grad()
    l_total.backward()
    optimizer.step()
    parts = {
        "L_acoustic": float(l_acoustic.detach()),
        "L_local": float(l_local.detach()),
        "L_utt": float(l_utt.detach()),
    }
    parts["L_total"] = (
        parts["L_acoustic"]
        + model.config.lambda_local * parts["L_local"]
        + model.config.lambda_utt * parts["L_utt"]
    )
    return parts


def predictor_parameter_names(model: TTSModel) -> set[str]:
    """Names of the parameters owned by the two text-based predictors."""
    return {
        name
        for name, _ in model.named_parameters()
        if name.startswith("um_predictor.") or name.startswith("lm_predictor.")
    }


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(
    model: TTSModel,
    path,
    step: int = 0,
    seed: int = 0,
    prior_means: dict[int, torch.Tensor] | None = None,
) -> None:
    """Single binary file: version, config echo, named parameter blocks."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
        "step": int(step),
        "seed": int(seed),
        "prior_means": {int(k): v for k, v in (prior_means or {}).items()},
    }
    torch.save(payload, path)


@dataclass(frozen=True)
class CheckpointInfo:
    step: int
    seed: int
    prior_means: dict[int, torch.Tensor]


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> tuple[TTSModel, CheckpointInfo]:
    """Rebuild the model; refuses checkpoints whose config does not match."""
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise AcousticError(f"{path}: unsupported checkpoint version {version}")
    config = ModelConfig(**payload["config"])
    if expected_config is not None and config != expected_config:
        raise AcousticError(f"{path}: checkpoint config does not match the requested config")
    model = TTSModel(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    info = CheckpointInfo(
        step=payload["step"],
        seed=payload["seed"],
        prior_means={int(k): v for k, v in payload["prior_means"].items()},
    )
    return model, info
