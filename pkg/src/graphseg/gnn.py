"""Graph propagation layers over a weighted adjacency.

Two flavours: a spectral-style layer that expects a degree-normalized
adjacency with self-loops, and a sum-aggregation layer that consumes the raw
adjacency plus a learnable self-loop scale. Both accept batched (B, n, n)
adjacencies with (B, n, d) node features, or unbatched 2-D equivalents.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .nn import BatchNorm, Linear, Module, Parameter
from .tensor import Tensor


def normalize_adjacency(adj: Tensor, literal_exponent: bool = False) -> Tensor:
    """Degree-normalize A with self-loops: D^(-1/2) (A + I) D^(-1/2).

    D is the diagonal of row sums of A + I. ``literal_exponent=True`` switches
    the right factor to D^(+1/2) for comparison; the symmetric form is the
    default because it keeps symmetric inputs symmetric.
    """
    n = adj.shape[-1]
    if adj.shape[-2] != n:
        raise DimensionError(f"adjacency must be square, got {adj.shape}")
    eye = Tensor(np.eye(n, dtype=adj.dtype))
    with_loops = adj + eye
    degrees = with_loops.sum(axis=-1)             # (…, n), strictly positive
    d_left = degrees ** -0.5
    d_right = degrees ** (0.5 if literal_exponent else -0.5)
    left_shape = degrees.shape + (1,)
    right_shape = degrees.shape[:-1] + (1, degrees.shape[-1])
    return with_loops * d_left.reshape(left_shape) * d_right.reshape(right_shape)


class GCNLayer(Module):
    """delta(A_hat @ Z @ W + b); expects a pre-normalized adjacency."""

    def __init__(self, in_features, out_features, activation=True, norm=True, rng=None):
        super().__init__()
        self.linear = Linear(in_features, out_features, rng=rng)
        self.activation = activation
        self.norm = BatchNorm(out_features, channel_axis=-1) if norm else None

    def forward(self, adj_norm: Tensor, z: Tensor) -> Tensor:
        if z.shape[-1] != self.linear.weight.shape[0]:
            raise DimensionError(
                f"node feature width {z.shape[-1]} does not match layer input "
                f"width {self.linear.weight.shape[0]}"
            )
        out = self.linear(adj_norm @ z)
        if self.norm is not None:
            out = self.norm(out)
        if self.activation:
            out = out.relu()
        return out


class GINLayer(Module):
    """delta(((1 + w) I + A) @ Z @ W + b) on the raw adjacency.

    ``w`` is a learnable scalar initialized at zero; the per-node view
    (1 + w) z_i + sum_j A_ij z_j gives the same result as the matrix form.
    """

    def __init__(self, in_features, out_features, activation=True, norm=True, rng=None):
        super().__init__()
        self.linear = Linear(in_features, out_features, rng=rng)
        self.self_weight = Parameter(np.zeros(()))
        self.activation = activation
        self.norm = BatchNorm(out_features, channel_axis=-1) if norm else None

    def forward(self, adj: Tensor, z: Tensor) -> Tensor:
        if z.shape[-1] != self.linear.weight.shape[0]:
            raise DimensionError(
                f"node feature width {z.shape[-1]} does not match layer input "
                f"width {self.linear.weight.shape[0]}"
            )
        n = adj.shape[-1]
        eye = Tensor(np.eye(n, dtype=adj.dtype))
        mixed = adj + eye * (self.self_weight + 1.0)
        out = self.linear(mixed @ z)
        if self.norm is not None:
            out = self.norm(out)
        if self.activation:
            out = out.relu()
        return out


def make_layer(kind: str, in_features: int, out_features: int,
               activation: bool, norm: bool, rng=None) -> Module:
    if kind == "gcn":
        return GCNLayer(in_features, out_features, activation, norm, rng=rng)
    if kind == "gin":
        return GINLayer(in_features, out_features, activation, norm, rng=rng)
    raise ValueError(f"unknown layer kind {kind!r}; expected 'gcn' or 'gin'")
