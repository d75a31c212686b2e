"""Cross-lingual extractive QA fine-tuning with translation augmentation and
contrastive embedding alignment between translated pairs."""

from .augment import (
    AugmentPlan,
    AugmentReport,
    CodePointShiftTransformer,
    Dropped,
    FileBackedTransformer,
    IdentityTransformer,
    TextTransformer,
    TranslationGroup,
    WordMapTransformer,
    augment_record,
    build_groups,
    groups_from_records,
    pivot_chain,
    relocate_answer,
)
from .corpus import (
    DatasetSplit,
    QaRecord,
    load_dataset,
    save_records,
    stratified_split,
    validate_record,
    write_split,
)
from .encoder import (
    Checkpoint,
    EncoderConfig,
    backward,
    forward,
    gap,
    gap_backward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .errors import AdapterError, InputError, NumericError, QalignError
from .estimators import ContrastiveQaEstimator, WordPieceTokenizer, check_records
from .evaluation import (
    DecodeConfig,
    JaccardReport,
    decode_answer,
    evaluate,
    jaccard,
    predict_answers,
)
from .features import (
    Feature,
    FeatureConfig,
    batch_features,
    build_features,
    load_feature_cache,
    save_feature_cache,
    stack_batch,
)
from .losses import LossBreakdown, contrastive_loss, task_loss, total_loss
from .tokenizer import Encoding, Vocab, build_vocab, load_vocab, save_vocab, tokenize
from .trainer import (
    PairedBatch,
    TrainConfig,
    TrainResult,
    TrainState,
    optimizer_step,
    pretrain_qa_head,
    sample_pair_batch,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "AugmentPlan",
    "AugmentReport",
    "Checkpoint",
    "CodePointShiftTransformer",
    "ContrastiveQaEstimator",
    "DatasetSplit",
    "DecodeConfig",
    "Dropped",
    "Encoding",
    "EncoderConfig",
    "Feature",
    "FeatureConfig",
    "FileBackedTransformer",
    "IdentityTransformer",
    "InputError",
    "JaccardReport",
    "LossBreakdown",
    "NumericError",
    "PairedBatch",
    "QaRecord",
    "QalignError",
    "TextTransformer",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "TranslationGroup",
    "Vocab",
    "WordMapTransformer",
    "WordPieceTokenizer",
    "augment_record",
    "backward",
    "batch_features",
    "build_features",
    "build_groups",
    "build_vocab",
    "check_records",
    "contrastive_loss",
    "decode_answer",
    "evaluate",
    "forward",
    "gap",
    "gap_backward",
    "groups_from_records",
    "init_params",
    "jaccard",
    "load_checkpoint",
    "load_dataset",
    "load_feature_cache",
    "load_vocab",
    "optimizer_step",
    "pivot_chain",
    "predict_answers",
    "pretrain_qa_head",
    "relocate_answer",
    "sample_pair_batch",
    "save_checkpoint",
    "save_feature_cache",
    "save_records",
    "save_vocab",
    "stack_batch",
    "stratified_split",
    "task_loss",
    "tokenize",
    "total_loss",
    "train",
    "validate_record",
    "write_split",
]
