"""Fine-tuning loop: pair-batch sampling, AdamW, contrastive gating, evaluation.

One optimization step: forward the batch, take the span-prediction loss; on
gated steps (``step % contrastive_interval == 0`` and
``step <= max_contrastive_steps``, steps counted from 1) additionally sample
an index-aligned pair batch of translation-group siblings, forward it through
the same parameters, and add ``w_contrastive`` times the contrastive loss
between the two pooled tap read-outs.  The pair forward contributes no task
loss; gradients flow through both read-outs of both forwards.

Determinism: the batch order for epoch ``e`` comes from the stream
``(seed, "order", e)`` and the pair draw for step ``s`` from
``(seed, "pair", s)``, so consuming one stream never shifts another and
identical (data, config, seed) reproduce byte-identical logs.  Checkpoints
are written at every evaluation; the run's result is the checkpoint with the
best overall validation Jaccard (ties to the earlier step).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .augment import TranslationGroup, base_id
from .corpus import QaRecord
from .encoder import (
    EncoderConfig,
    backward,
    forward,
    gap,
    gap_backward,
    init_params,
    load_checkpoint,
    pack_tensors,
    save_checkpoint,
    unpack_tensors,
)
from .errors import InputError, NumericError
from .evaluation import DecodeConfig, evaluate, write_eval_curve_csv
from .features import Batch, Feature, FeatureConfig, batch_features, build_features, stack_batch
from .losses import contrastive_loss_grads, task_loss_grads, total_loss
from .rng import Xoshiro256StarStar, mix64, stream
from .tokenizer import Vocab

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteGradientError(NumericError):
    def __init__(self, tensor_name: str):
        self.tensor_name = tensor_name
        super().__init__(f"non-finite gradient in tensor {tensor_name!r}; aborting the run")


class UnresolvableGroupError(InputError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    max_steps: int = 5000
    learning_rate: float = 3e-5
    weight_decay: float = 0.01
    w_contrastive: float = 0.05
    contrastive_interval: int = 500
    max_contrastive_steps: int = 1000
    eval_interval: int = 500
    seed: int = 0
    tap_layer: int | None = None  # overrides the encoder config when set
    grad_clip: float | None = None
    drop_unanswerable: bool = False

    def __post_init__(self):
        for name in (
            "batch_size",
            "max_steps",
            "learning_rate",
            "weight_decay",
            "w_contrastive",
            "contrastive_interval",
            "max_contrastive_steps",
            "eval_interval",
        ):
            value = getattr(self, name)
            if name in ("weight_decay", "w_contrastive"):
                if value < 0:
                    raise InputError(f"{name} must be >= 0, got {value}")
            elif value <= 0:
                raise InputError(f"{name} must be positive, got {value}")
        if self.contrastive_interval > self.max_steps:
            raise InputError(
                f"contrastive_interval={self.contrastive_interval} exceeds "
                f"max_steps={self.max_steps}"
            )
        if self.seed < 0:
            raise InputError(f"seed must be >= 0, got {self.seed}")


@dataclass
class TrainState:
    """Mutable optimizer state: parameters plus first/second moments."""

    step: int
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def fresh(cls, params: dict[str, np.ndarray]) -> "TrainState":
        return cls(
            step=0,
            params=params,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


@dataclass
class PairedBatch:
    original: Batch
    paired: Batch


def optimizer_step(
    state: TrainState, grads: dict[str, np.ndarray], cfg: TrainConfig
) -> TrainState:
    """One AdamW update (decoupled weight decay, bias-corrected moments).

    Raises :class:`NonFiniteGradientError` naming the first offending tensor.
    """
    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise NonFiniteGradientError(name)
    if cfg.grad_clip is not None:
        norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > cfg.grad_clip:
            scale = cfg.grad_clip / norm
            grads = {name: g * scale for name, g in grads.items()}
    state.step += 1
    bc1 = 1.0 - ADAM_BETA1**state.step
    bc2 = 1.0 - ADAM_BETA2**state.step
    for name, param in state.params.items():
        g = grads[name]
        state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        param -= cfg.learning_rate * (
            m_hat / (np.sqrt(v_hat) + ADAM_EPS) + cfg.weight_decay * param
        )
    return state


class PairFeatureCache:
    """Lazily built canonical feature per record: the window holding the
    answer, or window 0 when no window does."""

    def __init__(self, vocab: Vocab, cfg: FeatureConfig):
        self._vocab = vocab
        self._cfg = cfg
        self._cache: dict[str, Feature] = {}

    def get(self, record: QaRecord) -> Feature:
        if record.id not in self._cache:
            feats = build_features(record, self._vocab, self._cfg)
            chosen = next((f for f in feats if f.start_label > 0), feats[0])
            self._cache[record.id] = chosen
        return self._cache[record.id]


def sample_pair_batch(
    batch: Batch,
    groups: dict[str, TranslationGroup],
    rng: Xoshiro256StarStar,
    pair_cache: PairFeatureCache,
) -> PairedBatch:
    """Pair every batch row with a uniformly drawn translation-group sibling.

    The row's own record is excluded when the group has at least two members;
    a singleton group pairs the row with itself.
    """
    paired_features = []
    for feature in batch.features:
        group = groups.get(base_id(feature.record_id))
        if group is None:
            raise UnresolvableGroupError(
                f"no translation group for record {feature.record_id!r}"
            )
        members = group.members()
        candidates = [m for m in members if m.id != feature.record_id]
        if candidates:
            record = rng.choice(candidates)
        else:
            record = next((m for m in members if m.id == feature.record_id), None)
            if record is None:
                raise UnresolvableGroupError(
                    f"record {feature.record_id!r} is not a member of its group"
                )
        paired_features.append(pair_cache.get(record))
    return PairedBatch(original=batch, paired=stack_batch(paired_features))


@dataclass
class TrainResult:
    out_dir: Path
    best_step: int
    best_jaccard: float | None
    best_checkpoint: Path
    final_step: int
    train_log: list[dict]
    eval_log: list[dict]


def _training_features(records, vocab, feature_cfg, drop_unanswerable):
    features: list[Feature] = []
    for record in records:
        features.extend(build_features(record, vocab, feature_cfg))
    if drop_unanswerable:
        features = [f for f in features if f.start_label > 0]
    if not features:
        raise InputError("no training features (empty train split?)")
    return features


def _write_jsonl_line(fh, obj: dict) -> None:
    fh.write(json.dumps(obj) + "\n")


def _rewrite_log(path: Path, keep_upto_step: int) -> list[dict]:
    """Drop log lines past a checkpoint when resuming a crashed run."""
    entries = []
    if path.is_file():
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    entry = json.loads(line)
                    if entry["step"] <= keep_upto_step:
                        entries.append(entry)
        with open(path, "w", encoding="utf-8") as fh:
            for entry in entries:
                _write_jsonl_line(fh, entry)
    return entries


def _latest_checkpoint(out_dir: Path) -> Path | None:
    best = None
    for child in out_dir.glob("ckpt-*"):
        match = re.fullmatch(r"ckpt-(\d+)", child.name)
        if match and child.is_dir():
            step = int(match.group(1))
            if best is None or step > best[0]:
                best = (step, child)
    return best[1] if best else None


def _save_train_state(ckpt_dir: Path, state: TrainState, best) -> None:
    entries, blob = pack_tensors({**{f"m.{k}": v for k, v in state.m.items()},
                                  **{f"v.{k}": v for k, v in state.v.items()}})
    with open(ckpt_dir / "optimizer.json", "w", encoding="utf-8") as fh:
        json.dump({"tensors": entries}, fh)
        fh.write("\n")
    with open(ckpt_dir / "optimizer.bin", "wb") as fh:
        fh.write(blob)
    with open(ckpt_dir / "train_state.json", "w", encoding="utf-8") as fh:
        json.dump({"step": state.step, "best_step": best[0], "best_jaccard": best[1]}, fh)
        fh.write("\n")


def _load_train_state(ckpt_dir: Path) -> tuple[TrainState, tuple[int, float | None]]:
    ckpt = load_checkpoint(ckpt_dir)
    with open(ckpt_dir / "optimizer.json", encoding="utf-8") as fh:
        entries = json.load(fh)["tensors"]
    with open(ckpt_dir / "optimizer.bin", "rb") as fh:
        tensors = unpack_tensors(entries, fh.read())
    m = {k[2:]: v for k, v in tensors.items() if k.startswith("m.")}
    v = {k[2:]: v for k, v in tensors.items() if k.startswith("v.")}
    with open(ckpt_dir / "train_state.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    state = TrainState(step=meta["step"], params=ckpt.params, m=m, v=v)
    return state, (meta["best_step"], meta["best_jaccard"])


def train(
    train_records: list[QaRecord],
    validation_records: list[QaRecord],
    groups: dict[str, TranslationGroup] | None,
    vocab: Vocab,
    encoder_cfg: EncoderConfig,
    feature_cfg: FeatureConfig,
    train_cfg: TrainConfig,
    out_dir: str | Path,
    init_from: dict[str, np.ndarray] | None = None,
    decode_cfg: DecodeConfig | None = None,
    resume: bool = False,
) -> TrainResult:
    """Run the fine-tuning loop; see the module docstring for semantics.

    ``groups`` maps original record ids to their translation groups and
    enables the contrastive objective; pass None to disable pairing entirely
    (the head-pretraining stage).  ``init_from`` warm-starts the parameters
    (e.g. from a head-pretraining checkpoint); otherwise they are drawn with
    the training seed.
    """
    if not train_records:
        raise InputError("train split is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if train_cfg.tap_layer is not None:
        encoder_cfg = replace(encoder_cfg, tap_layer=train_cfg.tap_layer)
    decode_cfg = decode_cfg or DecodeConfig()

    features = _training_features(
        train_records, vocab, feature_cfg, train_cfg.drop_unanswerable
    )
    chunks_per_epoch = math.ceil(len(features) / train_cfg.batch_size)
    pair_cache = PairFeatureCache(vocab, feature_cfg)

    train_log_path = out_dir / "train_log.jsonl"
    eval_log_path = out_dir / "eval_log.jsonl"

    if resume:
        latest = _latest_checkpoint(out_dir)
        if latest is None:
            raise InputError(f"--resume requested but no checkpoint found in {out_dir}")
        state, best = _load_train_state(latest)
        train_log = _rewrite_log(train_log_path, state.step)
        eval_log = _rewrite_log(eval_log_path, state.step)
    else:
        params = init_from if init_from is not None else init_params(encoder_cfg, train_cfg.seed)
        params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        state = TrainState.fresh(params)
        best = (0, None)
        train_log = []
        eval_log = []
        for path in (train_log_path, eval_log_path):
            path.unlink(missing_ok=True)

    epoch_cache: dict[int, list[list[Feature]]] = {}

    def batch_for_step(step: int) -> Batch:
        epoch, index = divmod(step - 1, chunks_per_epoch)
        if epoch not in epoch_cache:
            epoch_cache.clear()
            epoch_cache[epoch] = batch_features(
                features, train_cfg.batch_size, mix64(train_cfg.seed, "order", epoch)
            )
        return stack_batch(epoch_cache[epoch][index])

    def run_eval(step: int) -> None:
        nonlocal best
        ckpt_dir = save_checkpoint(
            out_dir / f"ckpt-{step}", state.params, encoder_cfg, train_cfg.seed, step
        )
        if validation_records:
            report = evaluate(
                state.params, encoder_cfg, validation_records, vocab, feature_cfg, decode_cfg
            )
            entry = {
                "step": step,
                "jaccard_overall": float(report.overall),
                "jaccard_per_language": {
                    lang: float(score)
                    for lang, score in sorted(report.per_language.items())
                },
            }
            eval_log.append(entry)
            with open(eval_log_path, "a", encoding="utf-8") as fh:
                _write_jsonl_line(fh, entry)
            if best[1] is None or entry["jaccard_overall"] > best[1]:
                best = (step, entry["jaccard_overall"])
        else:
            best = (step, best[1])
        _save_train_state(ckpt_dir, state, best)

    train_fh = open(train_log_path, "a", encoding="utf-8")
    try:
        for step in range(state.step + 1, train_cfg.max_steps + 1):
            batch = batch_for_step(step)
            out = forward(
                state.params,
                encoder_cfg,
                batch.ids,
                batch.attention_mask,
                batch.segment_ids,
                want_cache=True,
            )
            l_task, d_start, d_end = task_loss_grads(
                out.start_logits, out.end_logits, batch.start_labels, batch.end_labels
            )

            gated = (
                groups is not None
                and step % train_cfg.contrastive_interval == 0
                and step <= train_cfg.max_contrastive_steps
            )
            if gated:
                paired = sample_pair_batch(
                    batch, groups, stream(train_cfg.seed, "pair", step), pair_cache
                )
                out_p = forward(
                    state.params,
                    encoder_cfg,
                    paired.paired.ids,
                    paired.paired.attention_mask,
                    paired.paired.segment_ids,
                    want_cache=True,
                )
                pooled_o = gap(out.tapped, batch.attention_mask)
                pooled_p = gap(out_p.tapped, paired.paired.attention_mask)
                l_con, d_pooled_o, d_pooled_p = contrastive_loss_grads(pooled_o, pooled_p)
                breakdown = total_loss(l_task, l_con, train_cfg.w_contrastive, True)
                if train_cfg.w_contrastive != 0.0:
                    w = train_cfg.w_contrastive
                    d_tap_o = gap_backward(w * d_pooled_o, batch.attention_mask)
                    d_tap_p = gap_backward(w * d_pooled_p, paired.paired.attention_mask)
                    grads = backward(state.params, encoder_cfg, out.cache, d_start, d_end, d_tap_o)
                    grads_p = backward(state.params, encoder_cfg, out_p.cache, None, None, d_tap_p)
                    for name in grads:
                        grads[name] += grads_p[name]
                else:
                    grads = backward(state.params, encoder_cfg, out.cache, d_start, d_end)
            else:
                breakdown = total_loss(l_task, 0.0, train_cfg.w_contrastive, False)
                grads = backward(state.params, encoder_cfg, out.cache, d_start, d_end)

            optimizer_step(state, grads, train_cfg)

            entry = {
                "step": step,
                "l_task": breakdown.l_task,
                "l_contrastive": breakdown.l_contrastive,
                "l_total": breakdown.l_total,
                "lr": train_cfg.learning_rate,
            }
            train_log.append(entry)
            _write_jsonl_line(train_fh, entry)
            train_fh.flush()

            if step % train_cfg.eval_interval == 0 or step == train_cfg.max_steps:
                run_eval(step)
    finally:
        train_fh.close()

    if validation_records:
        write_eval_curve_csv(eval_log, out_dir / "eval_curve.csv")
    best_step = best[0] if best[0] else state.step
    return TrainResult(
        out_dir=out_dir,
        best_step=best_step,
        best_jaccard=best[1],
        best_checkpoint=out_dir / f"ckpt-{best_step}",
        final_step=state.step,
        train_log=train_log,
        eval_log=eval_log,
    )


def pretrain_qa_head(
    records: list[QaRecord],
    validation_records: list[QaRecord],
    vocab: Vocab,
    encoder_cfg: EncoderConfig,
    feature_cfg: FeatureConfig,
    train_cfg: TrainConfig,
    out_dir: str | Path,
    decode_cfg: DecodeConfig | None = None,
    resume: bool = False,
) -> TrainResult:
    """Head-pretraining stage: the same loop with the contrastive path off.

    The contrastive weight is forced to zero and no pair batches are sampled;
    the resulting checkpoint warm-starts the fine-tuning stage.
    """
    return train(
        records,
        validation_records,
        groups=None,
        vocab=vocab,
        encoder_cfg=encoder_cfg,
        feature_cfg=feature_cfg,
        train_cfg=replace(train_cfg, w_contrastive=0.0),
        out_dir=out_dir,
        decode_cfg=decode_cfg,
        resume=resume,
    )
