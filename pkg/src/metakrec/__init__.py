"""Multi-channel knowledge-graph recommender built on light graph convolution."""
from .dataset import (
    DataError,
    EmptyDatasetError,
    InteractionDataset,
    KnowledgeGraph,
    ParseError,
    load_interactions,
    load_kg_triples,
    make_cold_start_train,
    split_dataset,
    ten_core_filter,
)
from .evaluation import MetricsReport, evaluate, ndcg_at_k, recall_at_k
from .kgembed import TransEConfig, TransEModel, load_transe, save_transe, train_transe
from .metakg import (
    CHANNELS,
    MetaGraph,
    build_channel,
    build_kg1,
    build_kg2,
    build_kg3,
    build_uk1,
    build_uk2,
    normalize,
    register,
)
from .model import MetaKRec, count_parameters, lgc_propagate, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, fit

__version__ = "0.1.0"
