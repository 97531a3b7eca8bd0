"""Model and training configuration with a versioned JSON file schema.

The on-disk document is nested JSON (see docs/config-schema.md)::

    {
      "schema_version": 1,
      "model": {
        "scg":  {"variant": "variational", "nodes": null, "epsilon": 1e-7},
        "gnn1": {"kind": "gcn"},
        "gnn2": {"kind": "gcn"},
        "hidden_dim": 128, "num_classes": 6, "patch_size": 448,
        "sum_residual": true, "double_apply_gain": false,
        "use_kl_loss": true, "use_diag_loss": true,
        "literal_degree_exponent": false,
        "backbone": {"stage_channels": [32, 64, 128, 256], "feature_dim": 256}
      },
      "train": { ... every TrainConfig field ... }
    }
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .backbone import BackboneConfig

SCHEMA_VERSION = 1


@dataclass
class ModelConfig:
    scg_variant: str = "variational"          # variational | ae | directed
    gnn1_kind: str = "gcn"                    # gcn | gin
    gnn2_kind: str = "gcn"
    hidden_dim: int = 128
    num_classes: int = 6
    node_grid: tuple[int, int] | None = None  # None: one node per feature cell
    epsilon: float = 1e-7
    sum_residual: bool = True
    double_apply_gain: bool = False
    use_kl_loss: bool = True
    use_diag_loss: bool = True
    literal_degree_exponent: bool = False
    patch_size: int = 448
    backbone: BackboneConfig = field(default_factory=BackboneConfig)

    def __post_init__(self):
        if self.gnn1_kind not in ("gcn", "gin") or self.gnn2_kind not in ("gcn", "gin"):
            raise ValueError("gnn kinds must be 'gcn' or 'gin'")
        if self.node_grid is not None:
            self.node_grid = tuple(self.node_grid)


@dataclass
class TrainConfig:
    initial_lr: float = 8.5e-5 / math.sqrt(2.0)
    bias_lr_multiplier: float = 2.0
    weight_decay: float = 2e-5       # skipped for biases and batch-norm params
    poly_power: float = 0.9
    poly_max_iter: float = 1e8
    step_decay_factor: float = 0.85
    step_decay_epochs: int = 15
    batch_size: int = 4
    patches_per_epoch: int = 4000
    epochs: int = 50
    seed: int = 0
    ignore_index: int | None = None

    def __post_init__(self):
        if self.initial_lr <= 0 or self.batch_size <= 0 or self.patches_per_epoch <= 0:
            raise ValueError("rates and sizes must be positive")
        if not (0.0 < self.step_decay_factor < 1.0):
            raise ValueError("step decay factor must lie in (0, 1)")


def _model_to_doc(m: ModelConfig) -> dict:
    return {
        "scg": {
            "variant": m.scg_variant,
            "nodes": list(m.node_grid) if m.node_grid else None,
            "epsilon": m.epsilon,
        },
        "gnn1": {"kind": m.gnn1_kind},
        "gnn2": {"kind": m.gnn2_kind},
        "hidden_dim": m.hidden_dim,
        "num_classes": m.num_classes,
        "patch_size": m.patch_size,
        "sum_residual": m.sum_residual,
        "double_apply_gain": m.double_apply_gain,
        "use_kl_loss": m.use_kl_loss,
        "use_diag_loss": m.use_diag_loss,
        "literal_degree_exponent": m.literal_degree_exponent,
        "backbone": asdict(m.backbone),
    }


def _model_from_doc(doc: dict) -> ModelConfig:
    scg = doc.get("scg", {})
    nodes = scg.get("nodes")
    defaults = ModelConfig()
    return ModelConfig(
        scg_variant=scg.get("variant", defaults.scg_variant),
        gnn1_kind=doc.get("gnn1", {}).get("kind", defaults.gnn1_kind),
        gnn2_kind=doc.get("gnn2", {}).get("kind", defaults.gnn2_kind),
        hidden_dim=doc.get("hidden_dim", defaults.hidden_dim),
        num_classes=doc.get("num_classes", defaults.num_classes),
        node_grid=tuple(nodes) if nodes else None,
        epsilon=scg.get("epsilon", defaults.epsilon),
        sum_residual=doc.get("sum_residual", defaults.sum_residual),
        double_apply_gain=doc.get("double_apply_gain", defaults.double_apply_gain),
        use_kl_loss=doc.get("use_kl_loss", defaults.use_kl_loss),
        use_diag_loss=doc.get("use_diag_loss", defaults.use_diag_loss),
        literal_degree_exponent=doc.get(
            "literal_degree_exponent", defaults.literal_degree_exponent
        ),
        patch_size=doc.get("patch_size", defaults.patch_size),
        backbone=BackboneConfig(**doc.get("backbone", {})),
    )


def to_document(model: ModelConfig, train: TrainConfig | None = None) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "model": _model_to_doc(model)}
    if train is not None:
        doc["train"] = asdict(train)
    return doc


def from_document(doc: dict) -> tuple[ModelConfig, TrainConfig]:
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported config schema version {version!r}; this build reads {SCHEMA_VERSION}"
        )
    model = _model_from_doc(doc.get("model", {}))
    train = TrainConfig(**doc.get("train", {}))
    return model, train


def save_config(path, model: ModelConfig, train: TrainConfig | None = None) -> None:
    Path(path).write_text(json.dumps(to_document(model, train), indent=2) + "\n")


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    return from_document(json.loads(Path(path).read_text()))
