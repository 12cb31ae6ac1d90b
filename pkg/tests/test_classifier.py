from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from emosynth.classifier import (
    ClassifierError,
    EmotionPosterior,
    load_classifier,
    predict_posterior,
    save_classifier,
    train_classifier,
    TrainingConfig,
)

CATEGORIES = ("neutral", "happiness", "anger")


def tiny_corpus():
    texts, labels = [], []
    words = {0: "calm flat plain", 1: "joy smile sun", 2: "rage fume storm"}
    for label, stem in words.items():
        for i in range(10):
            texts.append(f"{stem} filler{i % 3}")
            labels.append(label)
    return texts, labels


@pytest.fixture(scope="module")
def overfit_model():
    texts, labels = tiny_corpus()
    return train_classifier(texts, labels, CATEGORIES), texts, labels


@lru_cache(maxsize=1)
def _shared_model():
    texts, labels = tiny_corpus()
    return train_classifier(texts, labels, CATEGORIES)


class TestPosteriorType:
    def test_negative_entries_rejected(self):
        with pytest.raises(ClassifierError):
            EmotionPosterior(probs=np.array([1.2, -0.2]))

    def test_bad_sum_rejected(self):
        with pytest.raises(ClassifierError):
            EmotionPosterior(probs=np.array([0.4, 0.4]))

    def test_one_hot(self):
        p = EmotionPosterior.one_hot(1, 3)
        np.testing.assert_array_equal(p.probs, [0.0, 1.0, 0.0])


class TestTraining:
    def test_accuracy_on_own_data(self, overfit_model):
        model, texts, labels = overfit_model
        hits = sum(
            int(np.argmax(predict_posterior(model, t).probs) == y)
            for t, y in zip(texts, labels)
        )
        assert hits / len(texts) >= 0.9

    def test_memorized_text_argmax(self, overfit_model):
        model, texts, labels = overfit_model
        assert int(np.argmax(predict_posterior(model, texts[0]).probs)) == labels[0]

    def test_missing_category_rejected(self):
        with pytest.raises(ClassifierError, match="anger"):
            train_classifier(["a", "b"], [0, 1], CATEGORIES)

    def test_empty_corpus_rejected(self):
        with pytest.raises(ClassifierError):
            train_classifier([], [], CATEGORIES)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ClassifierError):
            train_classifier(["a"], [0, 1], CATEGORIES)

    def test_deterministic(self):
        texts, labels = tiny_corpus()
        a = train_classifier(texts, labels, CATEGORIES, TrainingConfig(seed=4))
        b = train_classifier(texts, labels, CATEGORIES, TrainingConfig(seed=4))
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.bias, b.bias)

    def test_category_permutation_permutes_posterior(self):
        texts, labels = tiny_corpus()
        perm = [2, 0, 1]  # new label = perm[old label]
        permuted_names = tuple(
            CATEGORIES[[perm.index(i) for i in range(3)][k]] for k in range(3)
        )
        a = train_classifier(texts, labels, CATEGORIES)
        b = train_classifier(texts, [perm[y] for y in labels], permuted_names)
        pa = predict_posterior(a, texts[5]).probs
        pb = predict_posterior(b, texts[5]).probs
        np.testing.assert_allclose(pb[[perm[i] for i in range(3)]], pa, atol=1e-12)


class TestPredictPosterior:
    def test_sums_to_one(self, overfit_model):
        model, texts, _ = overfit_model
        for text in texts[:5]:
            assert abs(float(predict_posterior(model, text).probs.sum()) - 1.0) < 1e-6

    def test_empty_text_is_uniform(self, overfit_model):
        model, _, _ = overfit_model
        np.testing.assert_array_equal(
            predict_posterior(model, "").probs, np.full(3, 1.0 / 3.0)
        )

    def test_unknown_tokens_are_uniform(self, overfit_model):
        model, _, _ = overfit_model
        np.testing.assert_array_equal(
            predict_posterior(model, "zzz qqq unseen").probs, np.full(3, 1.0 / 3.0)
        )

    @given(st.text(max_size=300))
    def test_posterior_always_valid(self, text):
        posterior = predict_posterior(_shared_model(), text)
        assert np.all(posterior.probs >= 0.0)
        assert abs(float(posterior.probs.sum()) - 1.0) < 1e-6


class TestGeneratorOracle:
    def test_held_out_argmax_matches_generator_emotion(self):
        """Synthetic texts carry emotion-correlated tokens the model can learn."""
        from emosynth.corpus import SyntheticConfig, generate_synthetic_corpus

        config = SyntheticConfig(syllable_range=(3, 8))
        corpus = generate_synthetic_corpus(seed=31, n_per_emotion=30, config=config)
        train = [u for u in corpus if int(u.id.split("-")[-1]) < 25]
        held = [u for u in corpus if int(u.id.split("-")[-1]) >= 25]
        model = train_classifier(
            [u.text for u in train], [u.emotion for u in train], config.category_names
        )
        hits = sum(
            int(np.argmax(predict_posterior(model, u.text).probs) == u.emotion)
            for u in held
        )
        assert hits / len(held) >= 0.8


class TestPersistence:
    def test_round_trip(self, overfit_model, tmp_path):
        model, texts, _ = overfit_model
        path = tmp_path / "clf.txt"
        save_classifier(model, path)
        loaded = load_classifier(path)
        assert loaded.category_names == model.category_names
        assert loaded.vocabulary == model.vocabulary
        for text in texts[:6] + ["", "unseen token"]:
            np.testing.assert_allclose(
                predict_posterior(loaded, text).probs,
                predict_posterior(model, text).probs,
                atol=1e-12,
            )

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("not a classifier\n")
        with pytest.raises(ClassifierError):
            load_classifier(path)
