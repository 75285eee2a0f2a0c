"""Next point-of-interest recommendation pipeline.

Preprocessing of raw check-in logs, context statistics, graph-based POI
embeddings, a long/short-term preference network, and Recall/NDCG
evaluation with ablation support.
"""

__version__ = "0.1.0"

from .config import (
    ContextConfig,
    GraphEmbeddingConfig,
    ModelConfig,
    PipelineConfig,
    PreprocessConfig,
    TrainConfig,
)
from .corpus import (
    Checkin,
    CorpusSplit,
    RawCheckin,
    Trajectory,
    corpus_report,
    filter_rare_pois,
    filter_users,
    load_corpus,
    parse_dataset,
    preprocess,
    save_corpus,
    segment_trajectories,
    split_corpus,
    time_slot_of,
)
from .context import (
    ContextStats,
    build_category_transitions,
    build_context,
    build_distance_matrix,
    build_poi_graph,
    build_social_context,
    build_time_correlation,
    build_time_interval_matrix,
    epsilon_cost,
    load_context,
    save_context,
)
from .embeddings import EmbeddingTables, embed_checkin, embed_user, train_corpus_embeddings
from .graphembed import train_graph_embedding
from .metrics import EvalReport, evaluate, ndcg_at_k, recall_at_k
from .model import NextPoiNet, compute_loss
from .samples import PredictionSample, build_test_samples, build_train_samples, collate
from .short_term import DilatedPlan, fuse_short_term, plan_dilation
from .train import load_checkpoint, save_checkpoint, train, train_model
