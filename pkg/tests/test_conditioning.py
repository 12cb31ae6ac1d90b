import numpy as np
import pytest
import torch

from emosynth.classifier import EmotionPosterior
from emosynth.conditioning import (
    GlobalEmbeddingTable,
    LocalStrengthPredictor,
    LocalStrengthProjection,
    UtteranceVariationEncoder,
    VariationPredictor,
    gm_embed,
    lm_loss,
    um_loss,
    um_prior_mean,
)
from emosynth.corpus import generate_synthetic_corpus, SyntheticConfig

D = 8


@pytest.fixture
def table():
    torch.manual_seed(0)
    return GlobalEmbeddingTable(n_categories=3, dim=D)


class TestGlobalEmbedding:
    def test_one_hot_reproduces_row_bitwise(self, table):
        for category in range(3):
            out = gm_embed(table, EmotionPosterior.one_hot(category, 3))
            assert torch.equal(out, table.weight[category])

    def test_uniform_over_two_rows_is_mean(self, table):
        posterior = EmotionPosterior(probs=np.array([0.5, 0.5, 0.0]))
        out = gm_embed(table, posterior)
        expected = (table.weight[0] + table.weight[1]) / 2
        torch.testing.assert_close(out, expected)

    def test_weighted_sum(self, table):
        posterior = EmotionPosterior(probs=np.array([0.5, 0.3, 0.2]))
        out = gm_embed(table, posterior)
        w = table.weight
        expected = 0.5 * w[0] + 0.3 * w[1] + 0.2 * w[2]
        torch.testing.assert_close(out, expected)

    def test_linearity_in_posterior(self, table, rng):
        for _ in range(20):
            p = rng.dirichlet(np.ones(3))
            q = rng.dirichlet(np.ones(3))
            alpha = float(rng.uniform())
            mixed = gm_embed(table, EmotionPosterior(probs=alpha * p + (1 - alpha) * q))
            combo = alpha * gm_embed(table, EmotionPosterior(probs=p)) + (
                1 - alpha
            ) * gm_embed(table, EmotionPosterior(probs=q))
            torch.testing.assert_close(mixed, combo, atol=1e-6, rtol=0)

    def test_length_mismatch_rejected(self, table):
        with pytest.raises(ValueError):
            gm_embed(table, torch.tensor([0.5, 0.5]))

    def test_invalid_posterior_rejected(self, table):
        with pytest.raises(ValueError):
            gm_embed(table, torch.tensor([0.9, 0.9, -0.8]))


class TestUtteranceVariationEncoder:
    def test_output_dim_independent_of_length(self):
        torch.manual_seed(0)
        enc = UtteranceVariationEncoder(mel_bins=10, dim=D).eval()
        short = enc(torch.randn(50, 10))
        long = enc(torch.randn(200, 10))
        assert short.shape == long.shape == (D,)

    def test_eval_mode_deterministic(self):
        torch.manual_seed(0)
        enc = UtteranceVariationEncoder(mel_bins=10, dim=D, dropout=0.5).eval()
        mel = torch.randn(30, 10)
        assert torch.equal(enc(mel), enc(mel))

    def test_train_mode_dropout_is_random(self):
        torch.manual_seed(0)
        enc = UtteranceVariationEncoder(mel_bins=10, dim=D, dropout=0.5).train()
        mel = torch.randn(30, 10)
        assert not torch.equal(enc(mel), enc(mel))

    def test_order_independence(self):
        torch.manual_seed(0)
        enc = UtteranceVariationEncoder(mel_bins=6, dim=D).eval()
        mels = [torch.randn(20, 6) for _ in range(3)]
        separate = [enc(m) for m in mels]
        permuted = [enc(mels[i]) for i in (2, 0, 1)]
        assert torch.equal(permuted[1], separate[0])
        assert torch.equal(permuted[0], separate[2])

    def test_empty_mel_rejected(self):
        enc = UtteranceVariationEncoder(mel_bins=6, dim=D)
        with pytest.raises(ValueError):
            enc(torch.zeros(0, 6))


class TestVariationPredictor:
    def test_shape_and_determinism(self):
        torch.manual_seed(0)
        pred = VariationPredictor(d_enc=12, dim=D).eval()
        enc = torch.randn(9, 12)
        out = pred(enc)
        assert out.shape == (D,)
        assert torch.equal(out, pred(enc))

    def test_overfits_single_target(self):
        torch.manual_seed(3)
        encoder = UtteranceVariationEncoder(mel_bins=8, dim=D, dropout=0.0).eval()
        predictor = VariationPredictor(d_enc=12, dim=D, dropout=0.0)
        mel = torch.randn(25, 8)
        enc = torch.randn(7, 12)
        with torch.no_grad():
            target = encoder(mel)
        opt = torch.optim.Adam(predictor.parameters(), lr=1e-2)
        for _ in range(400):
            opt.zero_grad()
            loss = um_loss(target, predictor(enc))
            loss.backward()
            opt.step()
        predictor.eval()
        with torch.no_grad():
            assert float(um_loss(target, predictor(enc))) < 1e-3


class TestUmLoss:
    def test_identical_is_zero(self):
        v = torch.randn(5)
        assert float(um_loss(v, v.clone())) == 0.0

    def test_three_four_five(self):
        a = torch.tensor([3.0, 4.0])
        b = torch.zeros(2)
        assert float(um_loss(a, b)) == 25.0

    def test_sign_symmetric(self):
        a, b = torch.randn(6), torch.randn(6)
        assert float(um_loss(a, b)) == pytest.approx(float(um_loss(b, a)), rel=1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            um_loss(torch.zeros(3), torch.zeros(4))

    def test_target_branch_carries_no_gradient(self):
        target = torch.randn(4, requires_grad=True)
        pred = torch.randn(4, requires_grad=True)
        um_loss(target, pred).backward()
        assert target.grad is None
        assert pred.grad is not None


class TestLocalStrengthProjection:
    def test_equal_strengths_equal_rows(self):
        torch.manual_seed(0)
        proj = LocalStrengthProjection(dim=D)
        rows = proj(torch.tensor([0.3, 0.7, 0.3]))
        assert torch.equal(rows[0], rows[2])

    def test_single_position_shape(self):
        proj = LocalStrengthProjection(dim=D)
        assert proj(torch.tensor([0.5])).shape == (1, D)

    def test_affine_in_strength(self):
        torch.manual_seed(1)
        proj = LocalStrengthProjection(dim=D)
        rows = proj(torch.tensor([0.0, 0.5, 1.0]))
        torch.testing.assert_close(rows[1], (rows[0] + rows[2]) / 2, atol=1e-6, rtol=0)

    def test_out_of_range_rejected(self):
        proj = LocalStrengthProjection(dim=D)
        with pytest.raises(ValueError):
            proj(torch.tensor([0.2, 1.2]))


class TestLocalStrengthPredictor:
    def test_length_and_range(self):
        torch.manual_seed(0)
        pred = LocalStrengthPredictor(d_enc=12).eval()
        out = pred(torch.randn(14, 12))
        assert out.shape == (14,)
        assert torch.all(out >= 0) and torch.all(out <= 1)

    def test_overfits_target_strengths(self):
        torch.manual_seed(5)
        predictor = LocalStrengthPredictor(d_enc=10, channels=24, dropout=0.0)
        enc = torch.randn(9, 10)
        target = torch.rand(9) * 0.8 + 0.1
        opt = torch.optim.Adam(predictor.parameters(), lr=1e-2)
        for _ in range(500):
            opt.zero_grad()
            loss = lm_loss(target, predictor(enc))
            loss.backward()
            opt.step()
        predictor.eval()
        with torch.no_grad():
            mse = float(((target - predictor(enc)) ** 2).mean())
        assert mse < 1e-3


class TestLmLoss:
    def test_identical_is_zero(self):
        s = torch.rand(7)
        assert float(lm_loss(s, s.clone())) == 0.0

    def test_swap_example(self):
        assert float(lm_loss(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0]))) == 2.0

    def test_quadratic_scaling(self):
        base = torch.zeros(5)
        d1 = torch.full((5,), 0.1)
        d2 = torch.full((5,), 0.2)
        assert float(lm_loss(base, d2)) == pytest.approx(4 * float(lm_loss(base, d1)), rel=1e-5)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            lm_loss(torch.zeros(3), torch.zeros(5))


@pytest.fixture(scope="module")
def encoder():
    torch.manual_seed(2)
    return UtteranceVariationEncoder(mel_bins=20, dim=D, dropout=0.3)


class TestPriorMean:
    def test_single_utterance_is_own_encoding(self, encoder, tiny_corpus):
        utt = tiny_corpus[0]
        prior = um_prior_mean(encoder, [utt])
        encoder.eval()
        with torch.no_grad():
            own = encoder(torch.tensor(np.asarray(utt.mel)))
        torch.testing.assert_close(prior, own)

    def test_two_utterances_average(self, encoder, tiny_corpus):
        pair = list(tiny_corpus[:2])
        prior = um_prior_mean(encoder, pair)
        encoder.eval()
        with torch.no_grad():
            a = encoder(torch.tensor(np.asarray(pair[0].mel)))
            b = encoder(torch.tensor(np.asarray(pair[1].mel)))
        torch.testing.assert_close(prior, (a + b) / 2)

    def test_category_filter(self, encoder, tiny_corpus):
        prior = um_prior_mean(encoder, list(tiny_corpus), category=1)
        only = um_prior_mean(encoder, [u for u in tiny_corpus if u.emotion == 1])
        torch.testing.assert_close(prior, only)

    def test_empty_selection_rejected(self, encoder, tiny_corpus):
        with pytest.raises(ValueError):
            um_prior_mean(encoder, list(tiny_corpus), category=99)

    def test_distinct_base_pitch_gives_distinct_priors(self, encoder):
        cfg = SyntheticConfig(syllable_range=(3, 5))
        corpus = generate_synthetic_corpus(seed=17, n_per_emotion=6, config=cfg)
        low = um_prior_mean(encoder, corpus, category=0)  # neutral, base 0.0
        high = um_prior_mean(encoder, corpus, category=4)  # surprise, base 1.2
        assert float((low - high).norm()) > 1e-3

    def test_restores_training_mode(self, encoder, tiny_corpus):
        encoder.train()
        um_prior_mean(encoder, list(tiny_corpus[:1]))
        assert encoder.training
        encoder.eval()


class TestGradientIsolation:
    def test_losses_only_reach_predictors(self):
        """Numeric gradient inspection of the routing rule."""
        torch.manual_seed(7)
        mel_bins, d_enc = 10, 12
        encoder = UtteranceVariationEncoder(mel_bins, D, dropout=0.0)
        um_pred = VariationPredictor(d_enc, D, dropout=0.0)
        lm_pred = LocalStrengthPredictor(d_enc, dropout=0.0)
        text_enc = torch.randn(6, d_enc, requires_grad=True)
        mel = torch.randn(15, mel_bins)

        h_utt = encoder(mel)
        barrier = text_enc.detach()
        loss = um_loss(h_utt, um_pred(barrier)) + lm_loss(torch.rand(6), lm_pred(barrier))
        loss.backward()

        assert text_enc.grad is None
        for p in encoder.parameters():
            assert p.grad is None or float(p.grad.abs().max()) == 0.0
        assert any(p.grad is not None and float(p.grad.abs().max()) > 0 for p in um_pred.parameters())
        assert any(p.grad is not None and float(p.grad.abs().max()) > 0 for p in lm_pred.parameters())


class TestFiniteDifferences:
    def test_predictor_gradients_match_central_differences(self):
        torch.manual_seed(11)
        d_enc = 10
        um_pred = VariationPredictor(d_enc, D, dropout=0.0).double()
        lm_pred = LocalStrengthPredictor(d_enc, dropout=0.0).double()
        enc = torch.randn(7, d_enc, dtype=torch.float64)
        target_v = torch.randn(D, dtype=torch.float64)
        target_s = torch.rand(7, dtype=torch.float64)

        def loss_value():
            return um_loss(target_v, um_pred(enc)) + lm_loss(target_s, lm_pred(enc))

        loss = loss_value()
        loss.backward()
        params = list(um_pred.named_parameters()) + list(lm_pred.named_parameters())
        rng = np.random.default_rng(0)
        for _ in range(12):
            _, p = params[rng.integers(len(params))]
            flat = p.detach().reshape(-1)
            idx = int(rng.integers(flat.numel()))
            h = 1e-6
            with torch.no_grad():
                orig = float(flat[idx])
                flat[idx] = orig + h
                plus = float(loss_value())
                flat[idx] = orig - h
                minus = float(loss_value())
                flat[idx] = orig
            numeric = (plus - minus) / (2 * h)
            analytic = float(p.grad.reshape(-1)[idx])
            assert numeric == pytest.approx(analytic, rel=1e-4, abs=1e-9)
