"""Whole-dataset evaluation: stitched predictions against label masks."""

from __future__ import annotations

import numpy as np

from .data import TileDataset
from .inference import sliding_window
from .metrics import ConfusionMatrix, MetricsReport, compute_metrics
from .model import SegmentationModel


def evaluate_dataset(model: SegmentationModel, dataset: TileDataset,
                     window: int = 448, stride: int = 100, tta: int = 4,
                     report_classes=None) -> tuple[MetricsReport, ConfusionMatrix]:
    cm = ConfusionMatrix(dataset.palette.num_classes)
    for index in range(len(dataset)):
        image, label = dataset.load_tile(index)
        if label is None:
            continue
        tile = image.transpose(2, 0, 1).astype(np.float32) / 255.0
        class_map, _ = sliding_window(model, tile, window=window, stride=stride, tta=tta)
        cm.update(class_map, label, ignore_index=dataset.ignore_index)
    return compute_metrics(cm, report_classes=report_classes), cm
