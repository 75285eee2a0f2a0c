"""Run configuration: one JSON-serializable structure covering every default.

Every CLI flag overrides the corresponding field; a config file fills the
rest. config_hash stamps derived artifacts so stale directories are
detectable.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field


def config_hash(obj):
    """Short stable hash of any JSON-serializable config fragment."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class PreprocessConfig:
    min_poi_visits: int = 10
    min_traj_len: int = 3
    min_user_trajs: int = 5
    window_hours: int = 24
    train_frac: float = 0.8
    tz_mode: str = "local"
    window_mode: str = "anchor"  # anchor | gap (rolling session window)
    filter_order: str = "pois_first"  # pois_first | users_first


@dataclass
class ContextConfig:
    category_norm: str = "softmax"  # softmax | ratio
    max_dense_users: int = 10000
    min_distance_km: float = 0.1  # clamp for exp(1/dis) spatial weights
    matrix_dtype: str = "float64"  # float32 halves the |L|x|L| matrix footprint


@dataclass
class GraphEmbeddingConfig:
    walk_length: int = 80
    walks_per_node: int = 10
    window: int = 10
    return_p: float = 1.0
    inout_q: float = 1.0
    epochs: int = 5
    dim: int = 500
    negatives: int = 5
    lr: float = 0.025
    min_lr: float = 0.0001

    def validate(self):
        for name in ("walk_length", "walks_per_node", "window", "return_p", "inout_q", "epochs", "dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"graph embedding config field {name} must be positive")


@dataclass
class ModelConfig:
    hidden: int = 500  # K
    dim_poi: int = 500  # D_l, frozen graph embedding
    dim_cat: int = 50  # D_c, frozen graph embedding
    dim_user: int = 40  # D_u
    dim_time: int = 10  # D_t
    dim_week: int = 10  # D_w
    kappa_max: int = 3
    epsilon_mode: str = "hard"  # hard | straight-through
    epsilon_loss_coef: float = 1.0  # only applied in straight-through mode
    lambda_aux: float = 0.1
    # Ablation toggles; "full" keeps everything on.
    use_long: bool = True
    use_short: bool = True
    use_social: bool = True
    use_self_att: bool = True
    use_st_att: bool = True
    use_plain_cell: bool = True  # standard current-trajectory recurrence in the fusion
    use_dilated_cell: bool = True  # skip-routed recurrence in the fusion
    category_in_epsilon: bool = True

    @property
    def checkin_dim(self):
        return self.dim_poi + self.dim_cat + self.dim_week + self.dim_time

    def validate(self):
        if not (self.use_long or self.use_short):
            raise ValueError("degenerate model: long-term and short-term both disabled")
        if self.use_short and not (self.use_plain_cell or self.use_dilated_cell):
            raise ValueError("short-term enabled but both recurrent passes disabled")
        if self.epsilon_mode not in ("hard", "straight-through"):
            raise ValueError(f"unknown epsilon_mode {self.epsilon_mode!r}")
        if self.hidden % 2 != 0:
            raise ValueError("hidden size must be even (two recurrent directions)")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    clip_norm: float = 5.0
    batch_size: int = 32
    max_epochs: int = 50
    max_steps: int = 0  # 0 = no step cap
    lr_patience: int = 3  # epochs of no val Rec@1 gain before halving lr
    stop_patience: int = 10
    val_frac: float = 0.1
    seed: int = 42
    max_histories: int = 0  # 0 = unlimited history trajectories per sample
    include_test_history: bool = True
    per_user_metrics: bool = False
    keep_epoch_checkpoints: bool = False
    track_test_loss: bool = True


@dataclass
class PipelineConfig:
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    context: ContextConfig = field(default_factory=ContextConfig)
    graph_embedding: GraphEmbeddingConfig = field(default_factory=GraphEmbeddingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        cfg = cls()
        for section_name, section in data.items():
            target = getattr(cfg, section_name, None)
            if target is None or not dataclasses.is_dataclass(target):
                raise ValueError(f"unknown config section {section_name!r}")
            known = {f.name for f in dataclasses.fields(target)}
            for key, value in section.items():
                if key not in known:
                    raise ValueError(f"unknown config key {section_name}.{key}")
                setattr(target, key, value)
        return cfg

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
