import numpy as np
import pytest
from scipy.stats import spearmanr

from emosynth.corpus import (
    PhonemeSequence,
    SyllableSpan,
    SyntheticConfig,
    Utterance,
    generate_synthetic_corpus,
)
from emosynth.pipeline import RankerSettings, train_emotion_ranker
from emosynth.ranker import (
    PairSet,
    RankerError,
    RankingModel,
    build_pairs,
    extract_strength_sequence,
    fit_normalizer,
    load_ranker,
    newton_minimize,
    normalize,
    ranking_objective,
    save_ranker,
    score,
    train_ranker,
)


def grid_search_minimum(pairs: PairSet, C: float, span: float = 3.0, points: int = 41) -> float:
    """Two-stage dense grid search over the weight space; the test oracle."""
    dim = pairs.dim
    center = np.zeros(dim)
    best = np.inf
    width = span
    for _ in range(3):
        axes = [np.linspace(center[d] - width, center[d] + width, points) for d in range(dim)]
        grids = np.meshgrid(*axes, indexing="ij")
        candidates = np.stack([g.ravel() for g in grids], axis=1)
        values = 0.5 * np.sum(candidates**2, axis=1)
        if pairs.ordered.size:
            hinge = np.maximum(0.0, 1.0 - candidates @ pairs.ordered.T)
            values += C * np.sum(hinge**2, axis=1)
        if pairs.similar.size:
            values += C * np.sum((candidates @ pairs.similar.T) ** 2, axis=1)
        idx = int(np.argmin(values))
        best = float(values[idx])
        center = candidates[idx]
        width = 2 * width / (points - 1)
    return best


def random_pair_problem(rng, dim, n_ordered, n_similar):
    ordered = rng.normal(loc=0.7, scale=1.0, size=(n_ordered, dim))
    similar = rng.normal(scale=0.4, size=(n_similar, dim))
    return PairSet(ordered=ordered, similar=similar)


class TestBuildPairs:
    def test_single_items(self, rng):
        pairs = build_pairs([np.ones(3)], [np.zeros(3)], max_pairs=10, seed=0)
        assert pairs.ordered.shape == (1, 3)
        assert pairs.similar.shape[0] == 0

    def test_counts_without_cap(self):
        emo = [np.full(2, i, dtype=float) for i in range(3)]
        neu = [np.full(2, -i, dtype=float) for i in range(2)]
        pairs = build_pairs(emo, neu, max_pairs=100, seed=0)
        assert pairs.ordered.shape[0] == 6
        assert pairs.similar.shape[0] == 3 + 1

    def test_cap_applies(self, rng):
        emo = [rng.normal(size=4) for _ in range(10)]
        neu = [rng.normal(size=4) for _ in range(10)]
        pairs = build_pairs(emo, neu, max_pairs=7, seed=0)
        assert pairs.ordered.shape[0] == 7
        assert pairs.similar.shape[0] == 7

    def test_deterministic_for_seed(self, rng):
        emo = [rng.normal(size=4) for _ in range(6)]
        neu = [rng.normal(size=4) for _ in range(6)]
        a = build_pairs(emo, neu, max_pairs=9, seed=5)
        b = build_pairs(emo, neu, max_pairs=9, seed=5)
        np.testing.assert_array_equal(a.ordered, b.ordered)
        np.testing.assert_array_equal(a.similar, b.similar)

    def test_empty_set_rejected(self):
        with pytest.raises(RankerError):
            build_pairs([], [np.zeros(2)], max_pairs=5, seed=0)

    def test_ordered_is_emotional_minus_neutral(self):
        pairs = build_pairs([np.array([2.0, 1.0])], [np.array([0.5, 0.5])], max_pairs=5, seed=0)
        np.testing.assert_array_equal(pairs.ordered[0], [1.5, 0.5])


class TestNewtonSolver:
    def test_zero_pairs_rejected(self):
        empty = PairSet(ordered=np.zeros((0, 2)), similar=np.zeros((0, 2)))
        with pytest.raises(RankerError):
            train_ranker(empty)

    def test_similar_only_minimizer_is_zero(self):
        pairs = PairSet(ordered=np.zeros((0, 1)), similar=np.array([[1.0]]))
        model = train_ranker(pairs, C=1.0)
        np.testing.assert_allclose(model.w, [0.0], atol=1e-9)

    def test_single_ordered_pair_closed_form(self):
        # minimize 0.5 w^2 + (1 - w)^2, stationary at w = 2/3
        pairs = PairSet(ordered=np.array([[1.0]]), similar=np.zeros((0, 1)))
        model = train_ranker(pairs, C=1.0)
        np.testing.assert_allclose(model.w, [2.0 / 3.0], atol=1e-6)

    def test_single_ordered_pair_matches_grid_oracle(self):
        pairs = PairSet(ordered=np.array([[1.0]]), similar=np.zeros((0, 1)))
        model = train_ranker(pairs, C=1.0)
        j = ranking_objective(model.w, pairs, 1.0)
        assert j <= grid_search_minimum(pairs, 1.0) + 1e-3

    def test_objective_non_increasing(self, rng):
        pairs = random_pair_problem(rng, 3, 12, 8)
        result = newton_minimize(pairs, C=10.0, tol=1e-6, max_iter=50)
        objectives = np.array(result.objectives)
        assert np.all(np.diff(objectives) <= 0.0)

    def test_separable_clouds_satisfy_all_constraints(self, rng):
        emo = [rng.normal(loc=[2.0, 2.0], scale=0.3) for _ in range(15)]
        neu = [rng.normal(loc=[0.0, 0.0], scale=0.3) for _ in range(15)]
        pairs = build_pairs(emo, neu, max_pairs=500, seed=0)
        model = train_ranker(pairs, C=10.0)
        margins = pairs.ordered @ model.w
        assert np.all(margins > 0.0)
        j = ranking_objective(model.w, pairs, 10.0)
        assert j <= grid_search_minimum(pairs, 10.0) + 1e-3

    def test_matches_grid_oracle_on_random_problems(self, rng):
        for _ in range(5):
            dim = int(rng.integers(1, 4))
            pairs = random_pair_problem(rng, dim, int(rng.integers(1, 12)), int(rng.integers(0, 9)))
            model = train_ranker(pairs, C=float(rng.uniform(0.5, 20.0)))
            j = ranking_objective(model.w, pairs, model.C)
            assert j <= grid_search_minimum(pairs, model.C) + 1e-3

    def test_non_finite_features_rejected(self):
        pairs = PairSet(ordered=np.array([[np.inf]]), similar=np.zeros((0, 1)))
        with pytest.raises(RankerError):
            train_ranker(pairs, C=1.0)


class TestScoreAndNormalize:
    def test_score_arithmetic(self):
        model = RankingModel(w=np.array([0.5, -1.0]), C=1.0, emotion=1)
        assert score(model, np.array([2.0, 1.0])) == 0.0

    def test_zero_weights(self, rng):
        model = RankingModel(w=np.zeros(4), C=1.0, emotion=1)
        assert score(model, rng.normal(size=4)) == 0.0

    def test_linearity(self, rng):
        model = RankingModel(w=rng.normal(size=5), C=1.0, emotion=1)
        fa, fb = rng.normal(size=5), rng.normal(size=5)
        np.testing.assert_allclose(
            score(model, fa + fb), score(model, fa) + score(model, fb), rtol=1e-12
        )

    def test_dimension_mismatch(self):
        model = RankingModel(w=np.zeros(3), C=1.0, emotion=1)
        with pytest.raises(RankerError):
            score(model, np.zeros(4))

    def test_midpoint(self):
        model = fit_normalizer(RankingModel(w=np.ones(1), C=1.0, emotion=1), [2.0, 6.0])
        assert normalize(model, 4.0) == 0.5

    def test_clamped(self):
        model = fit_normalizer(RankingModel(w=np.ones(1), C=1.0, emotion=1), [2.0, 6.0])
        assert normalize(model, 8.0) == 1.0
        assert normalize(model, -1.0) == 0.0

    def test_degenerate_scores_give_half(self):
        model = fit_normalizer(RankingModel(w=np.ones(1), C=1.0, emotion=1), [3.0, 3.0, 3.0])
        assert normalize(model, 3.0) == 0.5
        assert normalize(model, 100.0) == 0.5

    def test_normalize_before_fit_rejected(self):
        model = RankingModel(w=np.ones(1), C=1.0, emotion=1)
        with pytest.raises(RankerError):
            normalize(model, 1.0)

    def test_fit_on_empty_rejected(self):
        model = RankingModel(w=np.ones(1), C=1.0, emotion=1)
        with pytest.raises(RankerError):
            fit_normalizer(model, [])


@pytest.fixture(scope="module")
def trained():
    cfg = SyntheticConfig(syllable_range=(3, 8), phonemes_per_syllable=(1, 2))
    corpus = generate_synthetic_corpus(seed=21, n_per_emotion=30, config=cfg)
    model = train_emotion_ranker(corpus, emotion=1, neutral=0, settings=RankerSettings(seed=3))
    return corpus, model


class TestExtraction:

    def test_shapes(self, trained):
        corpus, model = trained
        utt = next(u for u in corpus if u.emotion == 1)
        seq = extract_strength_sequence(model, utt)
        assert seq.per_syllable.shape == (utt.n_syllables,)
        assert seq.per_phoneme.shape == (len(utt.phonemes),)
        assert np.all((seq.per_syllable >= 0) & (seq.per_syllable <= 1))

    def test_recovers_latent_ordering(self, trained):
        corpus, model = trained
        lat, ext = [], []
        for utt in corpus:
            if utt.emotion != 1:
                continue
            seq = extract_strength_sequence(model, utt)
            lat.extend(utt.latent_strengths)
            ext.extend(seq.per_syllable)
        assert spearmanr(lat, ext).statistic >= 0.8

    def test_neutral_gets_zeros(self, trained):
        corpus, _ = trained
        utt = next(u for u in corpus if u.emotion == 0)
        seq = extract_strength_sequence(None, utt)
        assert np.all(seq.per_syllable == 0.0)

    def test_wrong_emotion_rejected(self, trained):
        corpus, model = trained
        utt = next(u for u in corpus if u.emotion == 2)
        with pytest.raises(RankerError):
            extract_strength_sequence(model, utt)

    def test_identical_segments_identical_strengths(self, trained):
        _, model = trained
        frame = np.linspace(0.0, 1.0, 20, dtype=np.float32)
        mel = np.tile(frame, (6, 1))
        utt = Utterance(
            id="twin",
            phonemes=PhonemeSequence((1, 2)),
            syllables=(SyllableSpan(0, 0, 0, 2), SyllableSpan(1, 1, 3, 5)),
            mel=mel,
            emotion=1,
            text="",
        )
        seq = extract_strength_sequence(model, utt)
        assert seq.per_syllable[0] == seq.per_syllable[1]

    def test_feature_scaling_preserves_strength_ordering(self, rng):
        """Scaling every feature vector by a positive factor is an ordering no-op."""
        emo = [rng.normal(loc=1.0, size=4) for _ in range(12)]
        neu = [rng.normal(loc=0.0, size=4) for _ in range(12)]
        probes = [rng.normal(loc=1.0, size=4) for _ in range(9)]
        lam = 3.7

        def normalized_strengths(scale):
            pairs = build_pairs(
                [f * scale for f in emo], [f * scale for f in neu], max_pairs=300, seed=2
            )
            model = train_ranker(pairs, C=10.0, emotion=1)
            train_scores = [score(model, f * scale) for f in emo]
            model = fit_normalizer(model, train_scores)
            return np.array([normalize(model, score(model, f * scale)) for f in probes])

        base = normalized_strengths(1.0)
        scaled = normalized_strengths(lam)
        np.testing.assert_array_equal(np.argsort(base), np.argsort(scaled))


class TestPersistence:
    def test_round_trip(self, tmp_path, rng):
        model = fit_normalizer(
            RankingModel(w=rng.normal(size=12), C=10.0, emotion=3), rng.normal(size=40)
        )
        path = tmp_path / "m.rank"
        save_ranker(model, path)
        loaded = load_ranker(path)
        np.testing.assert_array_equal(loaded.w, model.w)
        assert loaded.C == model.C
        assert loaded.emotion == model.emotion
        assert loaded.score_min == model.score_min
        assert loaded.score_max == model.score_max

    def test_unfitted_round_trip(self, tmp_path, rng):
        model = RankingModel(w=rng.normal(size=3), C=1.0, emotion=2)
        path = tmp_path / "m.rank"
        save_ranker(model, path)
        assert not load_ranker(path).fitted

    def test_save_is_byte_deterministic(self, tmp_path, rng):
        model = RankingModel(w=rng.normal(size=5), C=2.0, emotion=1)
        save_ranker(model, tmp_path / "a.rank")
        save_ranker(model, tmp_path / "b.rank")
        assert (tmp_path / "a.rank").read_bytes() == (tmp_path / "b.rank").read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.rank"
        path.write_bytes(b"JUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNKJUNK")
        with pytest.raises(RankerError):
            load_ranker(path)
