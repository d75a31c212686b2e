"""Scikit-learn compatible facade over the pipeline.

Two estimators so the algorithm composes with the wider ecosystem
(``get_params``/``set_params``/``clone`` all work):

* :class:`WordPieceTokenizer` — a transformer: ``fit`` induces the vocabulary
  from raw texts, ``transform`` encodes texts into id/offset encodings.
* :class:`ContrastiveQaEstimator` — the full model: ``fit`` on QA records
  (optionally with translation groups for the contrastive objective),
  ``predict`` answer texts, ``score`` the mean Jaccard against gold answers.

Hyperparameter names mirror the underlying config dataclasses one-to-one.
"""

from __future__ import annotations

import tempfile
from dataclasses import replace
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .augment import TranslationGroup
from .corpus import QaRecord, validate_record
from .encoder import EncoderConfig, load_checkpoint
from .errors import InputError
from .evaluation import DecodeConfig, jaccard, predict_answers
from .features import FeatureConfig
from .tokenizer import Encoding, Vocab, build_vocab, tokenize
from .trainer import TrainConfig, train


def check_records(X) -> list[QaRecord]:
    """Validate an iterable of QA records (the estimator input contract)."""
    records = list(X)
    if not records:
        raise InputError("expected a non-empty sequence of QaRecord")
    failures = []
    for i, record in enumerate(records):
        if not isinstance(record, QaRecord):
            raise InputError(f"element {i} is {type(record).__name__}, expected QaRecord")
        for reason in validate_record(record):
            failures.append(f"{record.id}: {reason}")
    if failures:
        raise InputError("invalid record(s): " + "; ".join(failures[:5]))
    return records


class WordPieceTokenizer(BaseEstimator, TransformerMixin):
    """Word-piece tokenizer as a fit/transform estimator.

    ``fit`` takes an iterable of raw texts and induces a vocabulary of at
    most ``vocab_size`` pieces; a pre-built :class:`Vocab` can be supplied
    instead, in which case ``fit`` is a no-op on data.
    """

    def __init__(self, vocab_size: int = 8192, vocab: Vocab | None = None):
        self.vocab_size = vocab_size
        self.vocab = vocab

    def fit(self, X, y=None):
        if self.vocab is not None:
            self.vocab_ = self.vocab
        else:
            self.vocab_ = build_vocab([str(text) for text in X], self.vocab_size)
        return self

    def transform(self, X) -> list[Encoding]:
        if not hasattr(self, "vocab_"):
            raise NotFittedError("WordPieceTokenizer is not fitted yet")
        return [tokenize(self.vocab_, str(text)) for text in X]


class ContrastiveQaEstimator(BaseEstimator):
    """Span-prediction QA model with optional contrastive pair training.

    ``fit(X)`` fine-tunes on QA records; pass ``groups=`` (a mapping from
    original record id to :class:`TranslationGroup`) to enable the
    contrastive objective between translated pairs, and ``validation=`` to
    select the best checkpoint by held-out Jaccard.  ``predict(X)`` returns
    one answer text per record; ``score(X)`` the mean Jaccard against the
    records' own gold answers.
    """

    def __init__(
        self,
        vocab_size: int = 8192,
        d_model: int = 64,
        n_layers: int = 4,
        n_heads: int = 4,
        d_ffn: int = 256,
        max_positions: int = 512,
        tap_layer: int = 3,
        max_length: int = 384,
        doc_stride: int = 128,
        batch_size: int = 16,
        max_steps: int = 5000,
        learning_rate: float = 3e-5,
        weight_decay: float = 0.01,
        w_contrastive: float = 0.05,
        contrastive_interval: int = 500,
        max_contrastive_steps: int = 1000,
        eval_interval: int = 500,
        seed: int = 0,
        n_best: int = 20,
        max_answer_tokens: int = 30,
        vocab: Vocab | None = None,
        work_dir: str | None = None,
    ):
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_ffn = d_ffn
        self.max_positions = max_positions
        self.tap_layer = tap_layer
        self.max_length = max_length
        self.doc_stride = doc_stride
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.w_contrastive = w_contrastive
        self.contrastive_interval = contrastive_interval
        self.max_contrastive_steps = max_contrastive_steps
        self.eval_interval = eval_interval
        self.seed = seed
        self.n_best = n_best
        self.max_answer_tokens = max_answer_tokens
        self.vocab = vocab
        self.work_dir = work_dir

    def _configs(self):
        encoder_cfg = EncoderConfig(
            vocab_size=self.vocab_size if self.vocab is None else len(self.vocab),
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_ffn=self.d_ffn,
            max_positions=self.max_positions,
            tap_layer=self.tap_layer,
        )
        feature_cfg = FeatureConfig(max_length=self.max_length, doc_stride=self.doc_stride)
        train_cfg = TrainConfig(
            batch_size=self.batch_size,
            max_steps=self.max_steps,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            w_contrastive=self.w_contrastive,
            contrastive_interval=self.contrastive_interval,
            max_contrastive_steps=self.max_contrastive_steps,
            eval_interval=self.eval_interval,
            seed=self.seed,
        )
        decode_cfg = DecodeConfig(n_best=self.n_best, max_answer_tokens=self.max_answer_tokens)
        return encoder_cfg, feature_cfg, train_cfg, decode_cfg

    def fit(
        self,
        X,
        y=None,
        groups: dict[str, TranslationGroup] | None = None,
        validation: list[QaRecord] | None = None,
        init_from: dict[str, np.ndarray] | None = None,
    ):
        records = check_records(X)
        if self.vocab is not None:
            self.vocab_ = self.vocab
        else:
            corpus = [r.context for r in records] + [r.question for r in records]
            self.vocab_ = build_vocab(corpus, self.vocab_size)
        encoder_cfg, feature_cfg, train_cfg, decode_cfg = self._configs()
        encoder_cfg = replace(encoder_cfg, vocab_size=len(self.vocab_))
        with tempfile.TemporaryDirectory() as tmp:
            result = train(
                records,
                validation or [],
                groups,
                self.vocab_,
                encoder_cfg,
                feature_cfg,
                train_cfg,
                out_dir=self.work_dir or tmp,
                init_from=init_from,
                decode_cfg=decode_cfg,
            )
            ckpt = load_checkpoint(result.best_checkpoint)
        self.params_ = ckpt.params
        self.encoder_config_ = encoder_cfg
        self.feature_config_ = feature_cfg
        self.decode_config_ = decode_cfg
        self.best_step_ = result.best_step
        self.best_jaccard_ = result.best_jaccard
        self.train_log_ = result.train_log
        self.eval_log_ = result.eval_log
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("ContrastiveQaEstimator is not fitted yet")

    def predict(self, X) -> list[str]:
        self._check_fitted()
        records = check_records(X)
        predictions = predict_answers(
            self.params_,
            self.encoder_config_,
            records,
            self.vocab_,
            self.feature_config_,
            self.decode_config_,
        )
        return [predictions[r.id] for r in records]

    def score(self, X, y=None) -> float:
        """Mean word-set Jaccard of predictions against the records' answers."""
        self._check_fitted()
        records = check_records(X)
        predictions = self.predict(records)
        total = sum(
            (jaccard(pred, r.answer_text) for pred, r in zip(predictions, records)),
            Fraction(0),
        )
        return float(total / len(records))
