"""Kinship verification with cascaded local-expert comparator networks.

A pair of face embeddings is concatenated and fed through one small expert
network per kinship relation, chained so each expert refines the previous
one's hidden state; a one-hot relation encoder (or a learned attention
head when the relation is unknown) selects the output probability.
Includes the full training recipe, threshold calibration, tri-subject
fusion and a synthetic embedding-world generator for end-to-end runs
without any real face data.
"""

from .comparator import (
    Activation,
    ComparatorConfig,
    ComparatorParams,
    PoolingMode,
    SharingMode,
    attention_forward,
    forward,
    init_params,
    score_unknown,
    select_output,
    verify,
)
from .data import (
    DataFormatError,
    EmbeddingStore,
    KinPair,
    PairLabel,
    PairSet,
    PersonRef,
    TriSample,
    TriSet,
    augment_symmetric,
    concat_features,
    cosine_distance,
    load_embeddings,
    load_pairs,
    load_tri,
    resample_nonkin,
    save_embeddings,
    save_pairs,
    save_tri,
)
from .evaluation import (
    Direction,
    EvaluationReport,
    HistogramTable,
    Objective,
    ScoredPair,
    Scorer,
    accuracy_report,
    auc,
    calibrate_threshold,
    histogram,
    score_pairs,
    tri_score,
)
from .model_io import ModelFormatError, load_model, save_model
from .relations import (
    Gender,
    KinshipRelation,
    N_RELATIONS,
    RELATION_ORDER,
    index_to_relation,
    one_hot,
    relation_index,
)
from .synth import SynthConfig, SynthWorld, generate_world, make_person
from .training import (
    AdamState,
    TrainConfig,
    adam_step,
    backward,
    bce_loss,
    gradcheck,
    l2_penalty,
    train,
    train_attention,
)

__version__ = "0.1.0"
