"""End-to-end segmentation network.

backbone -> latent graph -> two propagation layers -> optional residual sum
-> reshape to the node grid -> bilinear projection to input resolution.

The first propagation layer maps node features to ``hidden_dim`` with ReLU and
batch norm; the second maps to ``num_classes`` with neither. Spectral (gcn)
slots consume the degree-normalized adjacency, sum-aggregation (gin) slots the
raw enhanced one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import TOTAL_STRIDE, Backbone
from .config import ModelConfig
from .gnn import make_layer, normalize_adjacency
from .graph import GraphBundle, GraphConstructor
from .nn import Module
from .tensor import Tensor


@dataclass
class ForwardResult:
    logits: Tensor                 # (B, H, W, C) or (H, W, C) for single images
    kl_loss: Tensor | None
    diag_loss: Tensor
    gain: np.ndarray               # (B,)
    adjacency: Tensor              # (B, n, n)
    node_features: Tensor          # (B, n, d_f)
    residual: Tensor | None        # (B, n, C)
    hidden: Tensor                 # (B, n, hidden_dim)
    node_logits: Tensor            # (B, n, C), before the residual sum


# the seven standard layer-stack configurations exercised by the shape sweep
STANDARD_VARIANTS = {
    "gcn": dict(scg_variant="variational", gnn1_kind="gcn", gnn2_kind="gcn", sum_residual=True),
    "gin": dict(scg_variant="variational", gnn1_kind="gin", gnn2_kind="gin", sum_residual=True),
    "gcn-gin": dict(scg_variant="variational", gnn1_kind="gcn", gnn2_kind="gin", sum_residual=True),
    "ae-gcn": dict(scg_variant="ae", gnn1_kind="gcn", gnn2_kind="gcn", sum_residual=True),
    "dir-gcn": dict(scg_variant="directed", gnn1_kind="gcn", gnn2_kind="gcn", sum_residual=True),
    "dir-gcn-gin": dict(scg_variant="directed", gnn1_kind="gcn", gnn2_kind="gin", sum_residual=True),
    "gcn-nosum": dict(scg_variant="variational", gnn1_kind="gcn", gnn2_kind="gcn", sum_residual=False),
}


class SegmentationModel(Module):
    def __init__(self, config: ModelConfig | None = None, rng: np.random.Generator | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        rng = rng or np.random.default_rng(0)
        cfg = self.config
        self.backbone = Backbone(cfg.backbone, rng=rng)
        self.graph = GraphConstructor(
            cfg.backbone.feature_dim,
            cfg.num_classes,
            node_grid=cfg.node_grid,
            variant=cfg.scg_variant,
            epsilon=cfg.epsilon,
            rng=rng,
        )
        self.gnn1 = make_layer(cfg.gnn1_kind, cfg.backbone.feature_dim,
                               cfg.hidden_dim, activation=True, norm=True, rng=rng)
        self.gnn2 = make_layer(cfg.gnn2_kind, cfg.hidden_dim, cfg.num_classes,
                               activation=False, norm=False, rng=rng)

    def node_grid_for(self, height: int, width: int) -> tuple[int, int]:
        if self.config.node_grid is not None:
            return self.config.node_grid
        return height // TOTAL_STRIDE, width // TOTAL_STRIDE

    def forward(self, images: Tensor, rng: np.random.Generator | None = None) -> ForwardResult:
        single = images.data.ndim == 3
        x = images.reshape((1,) + images.shape) if single else images
        h0, w0 = x.shape[-2:]
        fmap = self.backbone(x)
        bundle: GraphBundle = self.graph(fmap, rng=rng)

        cfg = self.config
        adj_for = {}
        for kind in (cfg.gnn1_kind, cfg.gnn2_kind):
            if kind == "gcn" and "gcn" not in adj_for:
                adj_for["gcn"] = normalize_adjacency(
                    bundle.adjacency, literal_exponent=cfg.literal_degree_exponent
                )
            elif kind == "gin":
                adj_for["gin"] = bundle.adjacency

        hidden = self.gnn1(adj_for[cfg.gnn1_kind], bundle.node_features)
        node_logits = self.gnn2(adj_for[cfg.gnn2_kind], hidden)

        out = node_logits
        if cfg.sum_residual and bundle.residual is not None:
            residual = bundle.residual
            if cfg.double_apply_gain:
                residual = residual * Tensor(
                    bundle.gain.reshape(-1, 1, 1).astype(residual.dtype)
                )
            out = out + residual

        gh, gw = self.node_grid_for(h0, w0)
        batch = out.shape[0]
        grid = out.reshape(batch, gh, gw, cfg.num_classes).permute(0, 3, 1, 2)
        from . import tensor as T

        upsampled = T.upsample_bilinear(grid, h0, w0)
        logits = upsampled.permute(0, 2, 3, 1)
        if single:
            logits = logits.reshape(logits.shape[1:])
        return ForwardResult(
            logits=logits,
            kl_loss=bundle.kl_loss,
            diag_loss=bundle.diag_loss,
            gain=bundle.gain,
            adjacency=bundle.adjacency,
            node_features=bundle.node_features,
            residual=bundle.residual,
            hidden=hidden,
            node_logits=node_logits,
        )


def build_variant(name: str, base: ModelConfig | None = None,
                  rng: np.random.Generator | None = None) -> SegmentationModel:
    """Instantiate one of the standard variants on top of ``base`` settings."""
    if name not in STANDARD_VARIANTS:
        raise ValueError(f"unknown variant {name!r}; known: {sorted(STANDARD_VARIANTS)}")
    from dataclasses import replace

    base = base or ModelConfig()
    return SegmentationModel(replace(base, **STANDARD_VARIANTS[name]), rng=rng)
