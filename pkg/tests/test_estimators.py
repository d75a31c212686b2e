import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from qalign.augment import TranslationGroup
from qalign.corpus import QaRecord
from qalign.errors import InputError
from qalign.estimators import ContrastiveQaEstimator, WordPieceTokenizer, check_records
from synth import make_records, shift_variants


class TestCheckRecords:
    def test_passes_valid(self):
        records = make_records(3, seed=0)
        assert check_records(records) == records

    def test_rejects_empty(self):
        with pytest.raises(InputError):
            check_records([])

    def test_rejects_wrong_type(self):
        with pytest.raises(InputError, match="dict"):
            check_records([{"id": "x"}])

    def test_rejects_invalid_record(self):
        bad = QaRecord("x", "abc", "q", "zz", 0, "aa")
        with pytest.raises(InputError, match="x:"):
            check_records([bad])


class TestWordPieceTokenizer:
    def test_fit_transform(self):
        tok = WordPieceTokenizer(vocab_size=24)
        encodings = tok.fit(["hello world", "hello there"]).transform(["hello"])
        assert len(encodings) == 1
        assert len(encodings[0].ids) >= 1

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            WordPieceTokenizer().transform(["x"])

    def test_get_params_and_clone(self):
        tok = WordPieceTokenizer(vocab_size=99)
        assert tok.get_params()["vocab_size"] == 99
        cloned = clone(tok)
        assert cloned.get_params() == tok.get_params()

    def test_prebuilt_vocab_used(self, char_vocab):
        tok = WordPieceTokenizer(vocab=char_vocab)
        tok.fit([])
        assert tok.vocab_ is char_vocab


@pytest.fixture(scope="module")
def fitted_estimator():
    records = make_records(6, seed=2, context_words=5)
    variants = shift_variants(records, "bb")
    groups = {
        r.id: TranslationGroup(original=r, variants={"bb": v},
                               provenance={"bb": "translation"})
        for r, v in zip(records, variants)
    }
    est = ContrastiveQaEstimator(
        vocab_size=160, d_model=8, n_layers=2, n_heads=2, d_ffn=16,
        max_positions=48, tap_layer=1, max_length=24, doc_stride=4,
        batch_size=4, max_steps=8, learning_rate=1e-3,
        contrastive_interval=4, max_contrastive_steps=8, eval_interval=4, seed=0,
    )
    est.fit(records + variants, groups=groups, validation=records[:2])
    return est, records, variants


class TestContrastiveQaEstimator:
    def test_sklearn_params_round_trip(self):
        est = ContrastiveQaEstimator(d_model=32, seed=7)
        params = est.get_params()
        assert params["d_model"] == 32 and params["seed"] == 7
        cloned = clone(est)
        assert cloned.get_params() == params
        est.set_params(seed=9)
        assert est.get_params()["seed"] == 9

    def test_not_fitted_guards(self):
        est = ContrastiveQaEstimator()
        with pytest.raises(NotFittedError):
            est.predict(make_records(1, seed=0))
        with pytest.raises(NotFittedError):
            est.score(make_records(1, seed=0))

    def test_fit_sets_attributes(self, fitted_estimator):
        est, records, _ = fitted_estimator
        assert hasattr(est, "params_")
        assert est.best_step_ >= 1
        assert len(est.train_log_) == 8
        assert est.encoder_config_.vocab_size == len(est.vocab_)

    def test_predict_returns_text_per_record(self, fitted_estimator):
        est, records, _ = fitted_estimator
        preds = est.predict(records)
        assert len(preds) == len(records)
        assert all(isinstance(p, str) for p in preds)

    def test_score_in_unit_interval(self, fitted_estimator):
        est, records, _ = fitted_estimator
        score = est.score(records)
        assert 0.0 <= score <= 1.0

    def test_rejects_invalid_input(self, fitted_estimator):
        est, _, _ = fitted_estimator
        with pytest.raises(InputError):
            est.predict(["not a record"])
