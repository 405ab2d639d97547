"""
Pydantic schemas for configuration, synthetic-data specs, manifests and reports.
"""
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

Variant = Literal["relation", "mean", "sum"]
UpdateOrder = Literal["jacobi", "gauss_seidel"]
Precision = Literal["float64", "float32"]
LrSchedule = Literal["constant", "cosine"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ==================== Model & training ====================

class ModelConfig(_Strict):
    """Architecture hyperparameters; table sizes are filled from the KB."""
    dim: int = Field(64, ge=1, description="Entity, fact and message embedding width d")
    t_max: int = Field(25, ge=1, description="Message-passing rounds")
    num_classes: int = Field(47, ge=2, description="Target relations plus the null class")
    variant: Variant = Field("sum", description="Entity initialisation: shared vector, mean or sum of type embeddings")
    msg_layers: Optional[Tuple[int, ...]] = Field(None, description="Message MLP layer sizes; defaults to (d, d, d)")
    vote_layers: Optional[Tuple[int, ...]] = Field(None, description="Vote MLP hidden sizes; C is appended; defaults to (d, d, d)")
    update_order: UpdateOrder = "jacobi"
    precision: Precision = "float64"
    forget_bias: float = 1.0
    num_relations: int = Field(0, ge=0)
    num_types: int = Field(0, ge=0)
    labels: Tuple[str, ...] = Field((), description="Class names, null class first")

    @model_validator(mode="after")
    def _fill_layers(self):
        if self.msg_layers is None:
            self.msg_layers = (self.dim,) * 3
        if self.vote_layers is None:
            self.vote_layers = (self.dim,) * 3
        if not self.msg_layers or min(self.msg_layers) < 1 or min(self.vote_layers, default=1) < 1:
            raise ValueError("layer sizes must be positive")
        if self.labels and len(self.labels) != self.num_classes:
            raise ValueError(f"{len(self.labels)} labels for {self.num_classes} classes")
        return self


class TrainConfig(_Strict):
    batch_size: int = Field(10, ge=1)
    steps_per_epoch: int = Field(128, ge=1)
    epochs: int = Field(2000, ge=1)
    lr: float = Field(2e-5, gt=0)
    lr_schedule: LrSchedule = Field("constant", description="cosine anneals lr to 0 over epochs x steps_per_epoch")
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    seed: int = Field(0, ge=0)
    max_path_length: int = Field(6, ge=1, description="L: longest path kept in query graphs")
    checkpoint_every: int = Field(0, ge=0, description="Epochs between checkpoints; 0 writes only the final one")
    log_every: int = Field(10, ge=1)
    deterministic: bool = False
    checked: bool = False
    clip_norm: Optional[float] = Field(None, gt=0)
    weight_decay: float = Field(0.0, ge=0)


# ==================== Synthetic data ====================

class SynthSpec(_Strict):
    """Planted-composition KB generator settings."""
    entities: int = Field(300, ge=3)
    base_relations: int = Field(10, ge=2)
    rules: int = Field(4, ge=1)
    rule_length: int = Field(2, ge=2, le=3)
    types: int = Field(6, ge=1, description="Background entity types")
    typed: bool = True
    density: float = Field(0.02, gt=0, le=1)
    negative_ratio: float = Field(1.0, ge=0)
    test_fraction: float = Field(0.2, ge=0, lt=1)
    max_path_length: int = Field(3, ge=2)
    seed: int = Field(7, ge=0)


# ==================== Run manifest ====================

class RunManifest(_Strict):
    command: str
    tool_version: str
    seed: Optional[int] = None
    config: Dict[str, object] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict, description="path -> sha256")
    artifacts: Dict[str, str] = Field(default_factory=dict)


# ==================== Evaluation reports ====================

class QueryResult(_Strict):
    source: str
    target: str
    relation: Optional[str]
    positive: bool
    label: int
    predicted: int
    ranking: List[int]
    num_paths: int = 0
    avg_path_length: float = 0.0


class RelationRow(_Strict):
    relation: str
    positives: int
    negatives: int
    map_at_5: Optional[float]
    tpr: Optional[float]
    tnr: Optional[float]
    avg_accuracy: Optional[float]


class Aggregates(_Strict):
    queries: int
    map_at_5: float
    tpr: Optional[float]
    tnr: Optional[float]
    avg_accuracy: float


class CurvePoint(_Strict):
    bin_lo: float
    bin_hi: float
    n: int
    map_at_5: float


class Curve(_Strict):
    by: Literal["path-length", "parallel-paths"]
    requested_bins: Optional[int]
    points: List[CurvePoint]
    omitted_bins: List[Tuple[float, float]] = Field(default_factory=list)


class EvalReport(_Strict):
    labels: List[str]
    k: int = 5
    rows: List[QueryResult]
    aggregates: Aggregates
    relations: List[RelationRow]
    skipped: int = 0
