"""Lightweight text emotion classifier with a posterior interface.

A bag-of-tokens multinomial logistic regression stands in for a heavyweight
pretrained encoder: downstream code only consumes the posterior over the M
emotion categories, so any stronger producer of the same interface can be
swapped in. Texts with no known tokens (including the empty text) map to the
uniform posterior.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

POSTERIOR_ATOL = 1e-6


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class EmotionPosterior:
    """Probability vector over the M emotion categories."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        if self.probs.ndim != 1:
            raise ClassifierError("posterior must be a vector")
        if np.any(self.probs < 0):
            raise ClassifierError("posterior entries must be non-negative")
        if abs(float(self.probs.sum()) - 1.0) > POSTERIOR_ATOL:
            raise ClassifierError(f"posterior sums to {self.probs.sum()}, expected 1")

    @classmethod
    def one_hot(cls, category: int, n_categories: int) -> "EmotionPosterior":
        probs = np.zeros(n_categories)
        probs[category] = 1.0
        return cls(probs=probs)

    @classmethod
    def uniform(cls, n_categories: int) -> "EmotionPosterior":
        return cls(probs=np.full(n_categories, 1.0 / n_categories))


@dataclass(frozen=True)
class TrainingConfig:
    iterations: int = 300
    learning_rate: float = 2.0
    l2: float = 1e-4
    seed: int = 0


@dataclass(frozen=True)
class ClassifierModel:
    category_names: tuple[str, ...]
    vocabulary: tuple[str, ...]
    weights: np.ndarray  # (M, V)
    bias: np.ndarray  # (M,)

    @property
    def n_categories(self) -> int:
        return len(self.category_names)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def _bag_vector(model_vocab: dict[str, int], text: str, n_vocab: int) -> np.ndarray:
    counts = np.zeros(n_vocab)
    for token in tokenize(text):
        idx = model_vocab.get(token)
        if idx is not None:
            counts[idx] += 1.0
    return counts


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def train_classifier(
    texts: list[str],
    labels: list[int],
    category_names: tuple[str, ...],
    config: TrainingConfig | None = None,
) -> ClassifierModel:
    """Fit the bag-of-tokens softmax model by full-batch gradient descent.

    Training is deterministic for a fixed config (weights start at zero and
    the batch order never matters). Every category must appear at least once.
    """
    config = config or TrainingConfig()
    if len(texts) != len(labels):
        raise ClassifierError(f"{len(texts)} texts but {len(labels)} labels")
    if not texts:
        raise ClassifierError("empty training corpus")
    m = len(category_names)
    present = set(labels)
    missing = [category_names[i] for i in range(m) if i not in present]
    if missing:
        raise ClassifierError(f"no training examples for categories: {', '.join(missing)}")
    if any(not 0 <= lab < m for lab in labels):
        raise ClassifierError("label outside category range")

    vocabulary = tuple(sorted({tok for text in texts for tok in tokenize(text)}))
    vocab_index = {tok: i for i, tok in enumerate(vocabulary)}
    x = np.stack([_bag_vector(vocab_index, text, len(vocabulary)) for text in texts])
    totals = x.sum(axis=1, keepdims=True)
    x = np.divide(x, totals, out=np.zeros_like(x), where=totals > 0)
    y = np.zeros((len(texts), m))
    y[np.arange(len(texts)), labels] = 1.0

    weights = np.zeros((m, len(vocabulary)))
    bias = np.zeros(m)
    n = len(texts)
    for _ in range(config.iterations):
        probs = _softmax(x @ weights.T + bias)
        err = (probs - y) / n
        weights -= config.learning_rate * (err.T @ x + config.l2 * weights)
        bias -= config.learning_rate * err.sum(axis=0)
    return ClassifierModel(
        category_names=tuple(category_names),
        vocabulary=vocabulary,
        weights=weights,
        bias=bias,
    )


def predict_posterior(model: ClassifierModel, text: str) -> EmotionPosterior:
    """Posterior over categories; unknown-token-only or empty text is uniform."""
    vocab_index = {tok: i for i, tok in enumerate(model.vocabulary)}
    counts = _bag_vector(vocab_index, text, len(model.vocabulary))
    total = counts.sum()
    if total == 0:
        return EmotionPosterior.uniform(model.n_categories)
    probs = _softmax(model.weights @ (counts / total) + model.bias)
    return EmotionPosterior(probs=probs)


def save_classifier(model: ClassifierModel, path: str | Path) -> None:
    """Text format: category header, bias line, then one token + weights per line."""
    lines = ["#categories:\t" + "\t".join(model.category_names)]
    lines.append("#bias:\t" + "\t".join(repr(float(b)) for b in model.bias))
    for i, token in enumerate(model.vocabulary):
        lines.append(token + "\t" + "\t".join(repr(float(w)) for w in model.weights[:, i]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_classifier(path: str | Path) -> ClassifierModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 2 or not lines[0].startswith("#categories:"):
        raise ClassifierError(f"{path}: missing category header")
    category_names = tuple(lines[0].split("\t")[1:])
    if not lines[1].startswith("#bias:"):
        raise ClassifierError(f"{path}: missing bias line")
    bias = np.array([float(v) for v in lines[1].split("\t")[1:]])
    vocabulary: list[str] = []
    columns: list[list[float]] = []
    for lineno, line in enumerate(lines[2:], 3):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != len(category_names) + 1:
            raise ClassifierError(f"{path}:{lineno}: expected {len(category_names)} weights")
        vocabulary.append(fields[0])
        columns.append([float(v) for v in fields[1:]])
    weights = np.array(columns).T if columns else np.zeros((len(category_names), 0))
    return ClassifierModel(
        category_names=category_names,
        vocabulary=tuple(vocabulary),
        weights=weights,
        bias=bias,
    )
