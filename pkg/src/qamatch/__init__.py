"""qamatch: character-level neural question-answer matching.

Four interactive sentence-representation architectures (a siamese
encoder, a crossed encoder, and crossed encoders with multi-scale CNN or
BiGRU heads) built on a small tape-based autodiff core, trained with a
margin ranking loss over question/answer triplets, and evaluated by
top-K retrieval accuracy over candidate pools.
"""

from .data import Dataset, SyntheticSpec, generate_synthetic, load_dataset, save_dataset, summarize
from .encoders import (
    CnnHeadConfig,
    CrossSchedule,
    EncoderConfig,
    GruHeadConfig,
    PoolingStrategy,
    TokenStates,
)
from .evaluation import (
    EvalPool,
    EvalReport,
    acc_at_k,
    build_pools,
    dataset_scorer,
    evaluate_pools,
    load_pools,
    rank_pool,
)
from .gradcheck import check_model_gradients, max_relative_error, numeric_gradient
from .matching import (
    LossConfig,
    Matcher,
    ModelConfig,
    ModelParams,
    PooledPair,
    SegmentScheme,
    Variant,
    cosine,
    cosine_node,
    encode_pair,
    forward_pair,
    init_model_params,
    margin_loss,
    margin_loss_node,
    triplet_loss_node,
)
from .tensor import ComputationTape, Tensor, backward
from .text import EmbeddingTables, EncodedSequence, Vocabulary, build_vocab, embed, encode
from .training import (
    AdamW,
    Checkpoint,
    TrainConfig,
    TrainResult,
    Triplet,
    load_checkpoint,
    sample_triplets,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
