"""Construction of a latent weighted graph from a 2-D feature map.

The constructor pools the feature map onto a node grid, flattens it row-major
into node features X, and learns per-node class-width embeddings from which a
nonnegative adjacency is decoded by inner products. Three variants share the
decoder:

* ``variational`` — a mean head (3x3 conv) and a log-deviation head (1x1 conv)
  parameterize a Gaussian; sampling uses Z = M + exp(logS) * noise, with a
  KL penalty toward the unit Gaussian and a residual term M * (1 - logS).
* ``ae`` — a single 3x3 head emits Z directly; no KL term, residual is Z.
* ``directed`` — variational encoder, but the adjacency is
  relu(softmax_rows(Z) @ Z^T), which is generally asymmetric.

The decoder also produces a gain g = sqrt(1 + n / (sum_i A_ii + eps)) and a
diagonal log penalty -(g / n^2) * sum_i log(clamp(A_ii, 0, 1) + eps); the gain
then scales both the adjacency diagonal and the residual. The gain is treated
as a constant during backpropagation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import Conv2d, Module
from .tensor import Tensor

VARIANTS = ("variational", "ae", "directed")


@dataclass
class GraphBundle:
    """Everything the graph constructor hands to the propagation stage."""

    adjacency: Tensor        # (B, n, n), diagonal-enhanced, entries >= 0
    node_features: Tensor    # (B, n, d_f), pooled + row-major flattened map
    residual: Tensor | None  # (B, n, c), gain-scaled refinement term
    gain: np.ndarray         # (B,), per-sample diagonal gain, > 1
    kl_loss: Tensor | None   # scalar; None for the ae variant
    diag_loss: Tensor        # scalar


def reparameterize(mean: Tensor, log_std: Tensor, noise: np.ndarray | None) -> Tensor:
    """Z = mean + exp(log_std) * noise; ``noise=None`` means the zero (eval) path."""
    if noise is None:
        return mean
    if noise.shape != mean.shape:
        raise DimensionError(
            f"noise shape {noise.shape} does not match embedding shape {mean.shape}"
        )
    return mean + log_std.exp() * Tensor(noise, dtype=mean.dtype)


def kl_divergence(mean: Tensor, log_std: Tensor) -> Tensor:
    """Mean per-entry KL toward the unit Gaussian, averaged over the batch.

    Per entry: -(1 + 2*log_std - mean^2 - exp(log_std)^2) / 2, which is
    nonnegative and zero exactly at mean 0, log_std 0.
    """
    n, c = mean.shape[-2:]
    terms = 1.0 + 2.0 * log_std - mean * mean - (2.0 * log_std).exp()
    per_sample = terms.sum(axis=(-2, -1)) * (-0.5 / (n * c))
    return per_sample.mean()


def residual_embedding(mean: Tensor, log_std: Tensor) -> Tensor:
    """mean * (1 - log_std); the factor is >= 0 once log_std is clamped to <= 1."""
    return mean * (1.0 - log_std)


def build_adjacency(z: Tensor, directed: bool = False) -> Tensor:
    """relu(Z Z^T), or relu(softmax_rows(Z) Z^T) for the directed form."""
    left = z.softmax(axis=-1) if directed else z
    return (left @ z.transpose()).relu()


def adjacency_gain_and_diag_loss(adj: Tensor, epsilon: float = 1e-7):
    """Per-sample gain sqrt(1 + n / (trace + eps)) and the diagonal log penalty.

    The gain is computed on detached values (no gradient flows through it);
    the penalty -(gain / n^2) * sum_i log(clamp(A_ii, 0, 1) + eps) is averaged
    over the batch and does backpropagate into the adjacency.
    """
    squeeze = adj.data.ndim == 2
    a = adj.reshape((1,) + adj.shape) if squeeze else adj
    n = a.shape[-1]
    diag = a.diagonal()                       # (B, n)
    diag_sum = diag.data.sum(axis=-1)         # detached
    gain = np.sqrt(1.0 + n / (diag_sum + epsilon))
    logs = (diag.clamp(0.0, 1.0) + epsilon).log().sum(axis=-1)  # (B,)
    coeff = Tensor((-gain / (n * n)).astype(a.dtype))
    loss = (logs * coeff).mean()
    return gain, loss


def enhance(adj: Tensor, residual: Tensor | None, gain: np.ndarray):
    """Scale the adjacency diagonal by (1 + gain) and the residual by gain."""
    gain = np.asarray(gain).reshape(-1)
    squeeze = adj.data.ndim == 2
    a = adj.reshape((1,) + adj.shape) if squeeze else adj
    g = Tensor(gain.reshape(-1, 1, 1).astype(a.dtype))
    enhanced = a + a.diagonal().diag_embed() * g
    if squeeze:
        enhanced = enhanced.reshape(enhanced.shape[1:])
    out_residual = None
    if residual is not None:
        r = residual.reshape((1,) + residual.shape) if residual.data.ndim == 2 else residual
        out_residual = r * Tensor(gain.reshape(-1, 1, 1).astype(r.dtype))
        if residual.data.ndim == 2:
            out_residual = out_residual.reshape(out_residual.shape[1:])
    return enhanced, out_residual


class GraphConstructor(Module):
    """Learns the latent graph (adjacency + node features) from a feature map.

    ``node_grid=None`` keeps one node per feature-map cell; a smaller grid
    pools first. The embedding width equals the class count.
    """

    def __init__(self, feature_dim: int, num_classes: int, node_grid=None,
                 variant: str = "variational", epsilon: float = 1e-7, rng=None):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.node_grid = tuple(node_grid) if node_grid is not None else None
        self.variant = variant
        self.epsilon = epsilon
        self.mean_head = Conv2d(feature_dim, num_classes, 3, padding=1,
                                pad_mode="edge", rng=rng)
        if variant != "ae":
            self.spread_head = Conv2d(feature_dim, num_classes, 1, rng=rng)

    def _pool(self, fmap: Tensor):
        h, w = fmap.shape[-2:]
        gh, gw = self.node_grid if self.node_grid is not None else (h, w)
        if gh > h or gw > w:
            raise DimensionError(
                f"node grid ({gh}, {gw}) exceeds feature grid ({h}, {w})"
            )
        return T.adaptive_avg_pool2d(fmap, gh, gw), gh, gw

    def _flatten_nodes(self, maps: Tensor):
        # (B, C, gh, gw) -> (B, gh*gw, C), row-major over the grid
        b, c, gh, gw = maps.shape
        return maps.permute(0, 2, 3, 1).reshape(b, gh * gw, c)

    def encode(self, fmap: Tensor):
        """Pooled node features plus mean / clamped log-deviation embeddings."""
        pooled, gh, gw = self._pool(fmap)
        x = self._flatten_nodes(pooled)
        mean = self._flatten_nodes(self.mean_head(pooled))
        log_std = self._flatten_nodes(self.spread_head(pooled)).clamp(max_value=1.0)
        return mean, log_std, x

    def forward(self, fmap: Tensor, rng: np.random.Generator | None = None) -> GraphBundle:
        if fmap.data.ndim == 3:
            fmap = fmap.reshape((1,) + fmap.shape)
        if self.variant == "ae":
            pooled, gh, gw = self._pool(fmap)
            x = self._flatten_nodes(pooled)
            z = self._flatten_nodes(self.mean_head(pooled))
            residual = z
            kl = None
        else:
            mean, log_std, x = self.encode(fmap)
            noise = None
            if self.training:
                if rng is None:
                    raise ValueError("training-mode forward needs an rng for the noise draw")
                noise = rng.standard_normal(mean.shape).astype(mean.dtype)
            z = reparameterize(mean, log_std, noise)
            residual = residual_embedding(mean, log_std)
            kl = kl_divergence(mean, log_std)
        adjacency = build_adjacency(z, directed=(self.variant == "directed"))
        gain, diag_loss = adjacency_gain_and_diag_loss(adjacency, self.epsilon)
        adjacency, residual = enhance(adjacency, residual, gain)
        return GraphBundle(adjacency, x, residual, gain, kl, diag_loss)
