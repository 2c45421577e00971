"""Cross-lingual sentence-embedding alignment over frozen encoder features.

A small trainable head (softmax layer combination + linear map) is trained
either adversarially with cycle consistency on unpaired text, or with a
triplet ranking loss on one bitext pair, and evaluated by margin-based bitext
mining and nearest-neighbor retrieval. A synthetic generator with known gold
alignments serves as the verification substrate.
"""

from .errors import (
    BadMagicError,
    DimensionError,
    FormatError,
    HeaderMismatchError,
    InvariantError,
    TruncatedError,
    VersionError,
    XlalignError,
)
from .feature_store import (
    FeatureSet,
    SentenceFeatures,
    average_layers,
    from_arrays,
    read_features,
    select_layers,
    subset_by_ids,
    write_features,
)
from .losses import (
    Batch,
    LossConfig,
    adversarial_loss,
    cosine,
    cycle_loss,
    discriminator_loss,
    ranking_loss_h,
    select_negatives,
    supervised_loss,
    unsupervised_loss,
)
from .miner import (
    EmbeddingIndex,
    MiningConfig,
    ScoredPair,
    apply_threshold,
    build_index,
    knn,
    margin_score,
    mine_candidates,
    optimize_threshold,
    retrieve_top1,
)
from .model import (
    AlignmentModel,
    CycleMaps,
    Discriminator,
    ExtractionModule,
    cycle_map,
    discriminator_score,
    encode,
    encode_batch,
    encode_features,
    gradients,
    init_model,
    layer_weights,
    load_model,
    save_model,
)
from .evaluation import (
    EvalReport,
    GoldAlignment,
    MiningTask,
    ablation_suite,
    f1,
    layer_sweep,
    p_at_1,
    run_mining_eval,
    run_retrieval_eval,
    run_sts_eval,
    spearman,
    threshold_transfer,
)
from .synth import HubSpec, SynthConfig, SynthCorpus, desk_config, generate, generate_hubbed
from .trainer import (
    AdamState,
    PairCorpus,
    TrainConfig,
    adam_step,
    load_checkpoint,
    save_checkpoint,
    train_multipair,
    train_supervised,
    train_unsupervised,
)

__version__ = "0.1.0"
