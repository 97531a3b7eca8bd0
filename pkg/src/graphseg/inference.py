"""Sliding-window inference with flip averaging, plus relation-map export.

Windows are placed at stride offsets along each axis with a final window
flushed to the border, so every pixel is covered; per-pixel probabilities are
averaged over covering windows (in probability space, after softmax). Flip
averaging uses 4 transforms (identity, horizontal, vertical, both) or 8 (the
same four composed with a transpose).
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, DimensionError
from .model import SegmentationModel
from .tensor import Tensor, no_grad

_FLIPS4 = ("identity", "hflip", "vflip", "hvflip")


def _apply_transform(image: np.ndarray, name: str) -> np.ndarray:
    # image is (..., H, W) channel-first
    if name == "identity":
        return image
    if name == "hflip":
        return image[..., ::-1]
    if name == "vflip":
        return image[..., ::-1, :]
    if name == "hvflip":
        return image[..., ::-1, ::-1]
    if name.startswith("t+"):
        return _apply_transform(np.swapaxes(image, -1, -2), name[2:])
    raise ValueError(f"unknown transform {name!r}")


def _invert_transform(probs: np.ndarray, name: str) -> np.ndarray:
    # probs is (H, W, C) channel-last; flips are involutions
    if name == "identity":
        return probs
    if name == "hflip":
        return probs[:, ::-1]
    if name == "vflip":
        return probs[::-1]
    if name == "hvflip":
        return probs[::-1, ::-1]
    if name.startswith("t+"):
        return np.swapaxes(_invert_transform(probs, name[2:]), 0, 1)
    raise ValueError(f"unknown transform {name!r}")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def predict_probabilities(model: SegmentationModel, image: np.ndarray) -> np.ndarray:
    """Softmax class probabilities (H, W, C) for one (3, H, W) [0,1] image."""
    model.eval()
    with no_grad():
        result = model.forward(Tensor(image.astype(np.float32)))
    return _softmax(result.logits.data)


def tta_probabilities(model: SegmentationModel, image: np.ndarray,
                      transforms: int = 4) -> np.ndarray:
    """Average probabilities over flip (and optionally transpose) variants."""
    if transforms not in (1, 4, 8):
        raise ValueError("transforms must be 1, 4, or 8")
    names = ("identity",) if transforms == 1 else _FLIPS4
    if transforms == 8:
        names = names + tuple(f"t+{n}" for n in _FLIPS4)
    acc = None
    for name in names:
        probs = predict_probabilities(model, _apply_transform(image, name))
        probs = _invert_transform(probs, name)
        acc = probs if acc is None else acc + probs
    return acc / len(names)


def window_origins(extent: int, window: int, stride: int) -> list[int]:
    """Stride offsets plus a final origin flushed to ``extent - window``."""
    if window > extent:
        raise DimensionError(f"window {window} exceeds extent {extent}")
    origins = list(range(0, extent - window + 1, stride))
    if origins[-1] != extent - window:
        origins.append(extent - window)
    return origins


def sliding_window(model: SegmentationModel, tile: np.ndarray, window: int = 448,
                   stride: int = 100, tta: int = 4):
    """Stitched prediction for one (3, H, W) [0,1] tile of arbitrary size.

    Tiles smaller than the window are reflect-padded up to it and the output
    cropped back. Returns (class map (H, W) int, probability map (H, W, C));
    argmax ties resolve to the lowest class index.
    """
    if tile.ndim != 3 or tile.shape[0] != 3:
        raise DataError(f"expected a (3, H, W) tile, got shape {tile.shape}")
    h, w = tile.shape[1:]
    pad_h = max(window - h, 0)
    pad_w = max(window - w, 0)
    if pad_h or pad_w:
        if min(h, w) < 2:
            raise DataError(
                f"tile ({h}x{w}) too small to pad up to the {window} window"
            )
        tile = np.pad(tile, ((0, 0), (0, pad_h), (0, pad_w)), mode="reflect")
    ph, pw = tile.shape[1:]

    prob_sum = None
    cover = np.zeros((ph, pw, 1), dtype=np.float64)
    for top in window_origins(ph, window, stride):
        for left in window_origins(pw, window, stride):
            crop = tile[:, top : top + window, left : left + window]
            probs = tta_probabilities(model, crop, transforms=tta) if tta > 1 \
                else predict_probabilities(model, crop)
            if prob_sum is None:
                prob_sum = np.zeros((ph, pw, probs.shape[-1]), dtype=np.float64)
            prob_sum[top : top + window, left : left + window] += probs
            cover[top : top + window, left : left + window] += 1.0
    prob_map = (prob_sum / cover)[:h, :w]
    class_map = np.argmax(prob_map, axis=-1).astype(np.int32)
    return class_map, prob_map


def relation_maps(model: SegmentationModel, image: np.ndarray,
                  node_ids: list[int], top_k: int = 9) -> dict[int, np.ndarray]:
    """Per-node heatmaps of the strongest learned edge weights.

    Each requested node's adjacency row is max-normalized to [0, 1], all but
    the ``top_k`` largest entries zeroed, reshaped onto the node grid, and
    bilinearly upsampled to image resolution.
    """
    model.eval()
    with no_grad():
        result = model.forward(Tensor(image.astype(np.float32)))
    adjacency = result.adjacency.data[0]
    n = adjacency.shape[0]
    h, w = image.shape[-2:]
    gh, gw = model.node_grid_for(h, w)
    from . import tensor as T

    maps = {}
    for node in node_ids:
        if not (0 <= node < n):
            raise IndexError(f"node id {node} out of range [0, {n - 1}]")
        row = adjacency[node].astype(np.float64).copy()
        peak = row.max()
        if peak > 0:
            row /= peak
        if n > top_k:
            cutoff = np.partition(row, n - top_k)[n - top_k]
            keep = row >= cutoff
            # break value ties deterministically, keeping at most top_k cells
            if keep.sum() > top_k:
                order = np.argsort(-row, kind="stable")[:top_k]
                keep = np.zeros(n, dtype=bool)
                keep[order] = True
            row = np.where(keep, row, 0.0)
        grid = Tensor(row.reshape(1, gh, gw).astype(np.float32))
        maps[node] = T.upsample_bilinear(grid, h, w).data[0]
    return maps
