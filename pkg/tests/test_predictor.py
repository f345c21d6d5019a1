"""Predictor model: forward consistency, distributions, masking policy."""

import numpy as np
import pytest

from bertese import tensor as T
from bertese.predictor import (
    PredictorConfig,
    PredictorModel,
    mask_batch,
    masked_cross_entropy,
    predict_mask_token,
)
from bertese.tensor import ShapeError, Tensor
from bertese.vocab import CLS, MASK, SEP, ClozeQuery


def tiny_model(vocab_size=10, dtype=np.float32, seed=0, max_len=8):
    cfg = PredictorConfig(
        dim=8, layers=2, heads=2, ffn_dim=16, max_len=max_len, vocab_size=vocab_size
    )
    return PredictorModel.init(cfg, np.random.default_rng(seed), dtype=dtype)


class TestConfig:
    def test_dim_must_divide_heads(self):
        with pytest.raises(ValueError):
            PredictorConfig(dim=10, heads=4, vocab_size=10).validate()

    def test_positive_fields(self):
        with pytest.raises(ValueError):
            PredictorConfig(dim=0, vocab_size=10).validate()
        with pytest.raises(ValueError):
            PredictorConfig(vocab_size=0).validate()


class TestForward:
    def test_distributions_sum_to_one(self):
        model = tiny_model()
        out = model.forward_tokens([[CLS, 5, MASK, SEP], [CLS, 6, 7, SEP]])
        np.testing.assert_allclose(out.probs.data.sum(axis=-1), 1.0, atol=1e-5)

    def test_tokens_equals_vectors_of_gathered_rows(self):
        model = tiny_model()
        ids = np.array([[CLS, 5, MASK, 7, SEP]])
        out_tok = model.forward_tokens(ids)
        out_vec = model.forward_vectors(
            T.gather_rows(model.params["tok_emb"], ids)
        )
        np.testing.assert_array_equal(out_tok.logits.data, out_vec.logits.data)

    def test_zero_vector_input_is_valid(self):
        model = tiny_model()
        out = model.forward_vectors(Tensor(np.zeros((1, 4, 8), dtype=np.float32)))
        assert np.isfinite(out.probs.data).all()
        np.testing.assert_allclose(out.probs.data.sum(axis=-1), 1.0, atol=1e-5)

    def test_oversize_sequence_rejected(self):
        model = tiny_model(max_len=4)
        with pytest.raises(ValueError, match="max_len"):
            model.forward_tokens([[CLS, 5, 6, 7, SEP]])

    def test_wrong_width_rejected(self):
        model = tiny_model()
        with pytest.raises(ShapeError):
            model.forward_vectors(Tensor(np.zeros((1, 4, 5), dtype=np.float32)))

    def test_untrained_model_near_uniform(self):
        model = tiny_model(vocab_size=10)
        q = ClozeQuery(tokens=(CLS, 5, MASK, SEP), mask_index=2, answer=6, relation="r")
        _, prob = predict_mask_token(model, q)
        assert abs(prob - 0.1) < 0.05

    def test_predicted_prob_matches_distribution(self):
        model = tiny_model()
        q = ClozeQuery(tokens=(CLS, 7, MASK, SEP), mask_index=2, answer=6, relation="r")
        token, prob = predict_mask_token(model, q)
        with T.no_grad():
            out = model.forward_tokens([list(q.tokens)])
        row = out.probs.data[0, q.mask_index]
        assert token == int(np.argmax(row))
        assert 0 < prob <= 1 and prob == pytest.approx(row[token])

    def test_tied_head_has_no_stale_copy(self):
        model = tiny_model()
        vectors = Tensor(
            np.random.default_rng(1).standard_normal((1, 3, 8)).astype(np.float32)
        )
        before = model.forward_vectors(vectors).logits.data.copy()
        model.params["tok_emb"].data[5] += 1.0
        after = model.forward_vectors(vectors).logits.data
        assert not np.array_equal(before, after)

    def test_init_deterministic(self):
        a, b = tiny_model(seed=3), tiny_model(seed=3)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name].data, b.params[name].data)


class TestMaskPolicy:
    def sentences(self):
        # (tokens, object position)
        return [
            ((CLS, 5, 6, 7, 8, SEP), 4),
            ((CLS, 9, 6, 7, 5, SEP), 4),
        ]

    def test_never_masks_specials(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            ids, positions, labels = mask_batch(self.sentences(), rng)
            for row, pos in enumerate(positions):
                assert 1 <= pos <= 4
                assert ids[row, pos] == MASK
                assert labels[row] == self.sentences()[row][0][pos]

    def test_object_masked_about_half_the_time(self):
        rng = np.random.default_rng(1)
        hits = 0
        trials = 400
        for _ in range(trials):
            _, positions, _ = mask_batch(self.sentences()[:1], rng)
            hits += positions[0] == 4
        # 0.5 object branch plus 1/4 chance in the random branch
        assert 0.5 < hits / trials < 0.75

    def test_all_special_sentence_rejected(self):
        with pytest.raises(ValueError):
            mask_batch([((CLS, MASK, SEP), 1)], np.random.default_rng(0))


class TestTraining:
    def test_initial_loss_near_log_vocab(self):
        model = tiny_model(vocab_size=30, dtype=np.float64)
        sentences = [((CLS, 10, 11, 12, SEP), 3), ((CLS, 13, 14, 15, SEP), 3)]
        ids, positions, labels = mask_batch(sentences, np.random.default_rng(0))
        loss = masked_cross_entropy(model.forward_tokens(ids), positions, labels)
        assert abs(loss.item() - np.log(30)) < 0.2

    def test_cross_entropy_gradient_matches_finite_differences(self):
        model = tiny_model(vocab_size=12, dtype=np.float64, seed=5)
        rng = np.random.default_rng(2)
        vectors = Tensor(rng.standard_normal((2, 4, 8)) * 0.1, requires_grad=True)
        positions = np.array([1, 2])
        labels = np.array([7, 3])

        def build():
            return masked_cross_entropy(model.forward_vectors(vectors), positions, labels)

        err = T.grad_check(build, [vectors])
        assert err < 1e-4
