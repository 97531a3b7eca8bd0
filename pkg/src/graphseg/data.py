"""Tile datasets, patch sampling, augmentation, and the synthetic generator.

On-disk layout: ``<root>/{images,labels}/<tile>.png`` with matching basenames,
plus an optional ``palette.json`` beside them mapping class indices to names
and display colors. Images are 8-bit RGB; labels are single-channel index
masks (palette or grayscale PNG).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError

# fixed fallback display colors (index -> RGB)
_DEFAULT_COLORS = [
    (70, 110, 70), (219, 62, 62), (65, 105, 225), (240, 200, 60),
    (150, 80, 190), (70, 200, 200), (230, 140, 60), (120, 120, 120),
]


@dataclass
class ClassPalette:
    names: list[str]
    colors: list[tuple[int, int, int]]

    @property
    def num_classes(self) -> int:
        return len(self.names)

    @staticmethod
    def default(num_classes: int) -> "ClassPalette":
        names = [f"class_{i}" if i else "background" for i in range(num_classes)]
        colors = [_DEFAULT_COLORS[i % len(_DEFAULT_COLORS)] for i in range(num_classes)]
        return ClassPalette(names, colors)

    def save(self, path) -> None:
        doc = {
            "classes": [
                {"index": i, "name": n, "color": list(c)}
                for i, (n, c) in enumerate(zip(self.names, self.colors))
            ]
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @staticmethod
    def load(path) -> "ClassPalette":
        doc = json.loads(Path(path).read_text())
        entries = sorted(doc["classes"], key=lambda e: e["index"])
        if [e["index"] for e in entries] != list(range(len(entries))):
            raise DataError(f"{path}: class indices must be 0..c-1 without gaps")
        return ClassPalette(
            [e["name"] for e in entries],
            [tuple(e["color"]) for e in entries],
        )


def _read_image(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def _read_label(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode in ("P", "L"):
            return np.asarray(img, dtype=np.int32)
        raise DataError(
            f"{path}: labels must be single-channel index masks (mode P or L), "
            f"got mode {img.mode}; run convert-labels for RGB color masks"
        )


@dataclass
class TileDataset:
    root: Path
    split: str
    pairs: list[tuple[Path, Path | None]]
    palette: ClassPalette
    ignore_index: int | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.pairs)

    def load_tile(self, index: int):
        """(image uint8 (H, W, 3), label int32 (H, W) or None); cached."""
        if index not in self._cache:
            img_path, lbl_path = self.pairs[index]
            image = _read_image(img_path)
            label = _read_label(lbl_path) if lbl_path is not None else None
            self._cache[index] = (image, label)
        return self._cache[index]

    def tile_name(self, index: int) -> str:
        return self.pairs[index][0].stem


def load_dataset(root, split: str = "train", num_classes: int | None = None,
                 ignore_index: int | None = None, require_labels: bool = True) -> TileDataset:
    """Validate and index ``<root>[/<split>]/{images,labels}``.

    Every image must have a same-sized label mask with values in
    [0, c-1] or ignore_index. Class count comes from palette.json when
    present, otherwise from ``num_classes``.
    """
    root = Path(root)
    base = root / split if (root / split / "images").is_dir() else root
    images_dir = base / "images"
    labels_dir = base / "labels"
    if not images_dir.is_dir():
        raise DataError(f"{images_dir}: missing images/ directory")

    palette_path = base / "palette.json"
    if not palette_path.exists():
        palette_path = root / "palette.json"
    if palette_path.exists():
        palette = ClassPalette.load(palette_path)
    elif num_classes is not None:
        palette = ClassPalette.default(num_classes)
    else:
        raise DataError(
            f"{base}: no palette.json found and no class count given"
        )
    c = palette.num_classes

    pairs = []
    image_paths = sorted(images_dir.glob("*.png"))
    if not image_paths:
        warnings.warn(f"{images_dir}: no tiles found, dataset is empty")
    for img_path in image_paths:
        lbl_path = labels_dir / img_path.name
        if not lbl_path.exists():
            if require_labels:
                raise DataError(f"{img_path.name}: missing label mask {lbl_path}")
            pairs.append((img_path, None))
            continue
        image = _read_image(img_path)
        label = _read_label(lbl_path)
        if image.shape[:2] != label.shape:
            raise DataError(
                f"{img_path.name}: image size {image.shape[:2]} does not match "
                f"label size {label.shape}"
            )
        legal = (label >= 0) & (label < c)
        if ignore_index is not None:
            legal |= label == ignore_index
        if not legal.all():
            bad = label[~legal].flat[0]
            allowed = f"[0, {c - 1}]"
            if ignore_index is not None:
                allowed += f" plus ignore value {ignore_index}"
            raise DataError(
                f"{lbl_path.name}: label value {int(bad)} outside legal range {allowed}"
            )
        pairs.append((img_path, lbl_path))
    return TileDataset(root, split, pairs, palette, ignore_index)


@dataclass
class PatchSampler:
    """Uniform tile choice, then a uniform fully-inside window offset."""

    patch_size: int = 448
    patches_per_epoch: int = 4000
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def sample(self, dataset: TileDataset):
        """One ([0,1] float32 image patch (3, p, p), label patch (p, p))."""
        if len(dataset) == 0:
            raise DataError("cannot sample from an empty dataset")
        index = int(self.rng.integers(len(dataset)))
        image, label = dataset.load_tile(index)
        h, w = image.shape[:2]
        p = self.patch_size
        if h < p or w < p:
            raise DataError(
                f"tile {dataset.tile_name(index)} ({h}x{w}) is smaller than the "
                f"patch size {p}; pad tiles up to the patch size first"
            )
        top = int(self.rng.integers(h - p + 1))
        left = int(self.rng.integers(w - p + 1))
        img = image[top : top + p, left : left + p]
        lbl = label[top : top + p, left : left + p] if label is not None else None
        img = img.transpose(2, 0, 1).astype(np.float32) / 255.0
        return img, lbl


def augment(image: np.ndarray, label: np.ndarray | None, rng: np.random.Generator):
    """Independent horizontal / vertical flips (p=0.5 each), same for both maps."""
    if rng.random() < 0.5:  # mirror columns
        image = image[..., ::-1]
        label = None if label is None else label[..., ::-1]
    if rng.random() < 0.5:  # mirror rows
        image = image[..., ::-1, :]
        label = None if label is None else label[..., ::-1, :]
    return np.ascontiguousarray(image), (
        None if label is None else np.ascontiguousarray(label)
    )


# -- synthetic data ------------------------------------------------------------


def _paint_disc(label, cy, cx, r, value):
    h, w = label.shape
    yy, xx = np.ogrid[:h, :w]
    label[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = value


def _paint_box(label, cy, cx, hh, hw, value):
    h, w = label.shape
    y0, y1 = max(cy - hh, 0), min(cy + hh, h)
    x0, x1 = max(cx - hw, 0), min(cx + hw, w)
    label[y0:y1, x0:x1] = value


def _paint_diamond(label, cy, cx, r, value):
    h, w = label.shape
    yy, xx = np.ogrid[:h, :w]
    label[np.abs(yy - cy) + np.abs(xx - cx) <= r] = value


_SHAPE_PAINTERS = [_paint_disc, _paint_box, _paint_diamond]

# saturated, well-separated class colors: background plus up to 5 foregrounds
_SYNTH_COLORS = [
    (62, 96, 62), (205, 49, 49), (52, 94, 208), (228, 190, 48),
    (142, 68, 173), (46, 196, 182),
]


def generate_synthetic_dataset(out_dir, tiles: int, size: int = 512,
                               classes: int = 3, seed: int = 0) -> ClassPalette:
    """Write color-coded geometric shapes on a textured background.

    Class 0 is the background; each foreground class gets its own shape family
    and color, jittered per tile and per pixel. Shapes are sized generously so
    a stride-16 model can resolve them.
    """
    if not (2 <= classes <= len(_SYNTH_COLORS)):
        raise DataError(f"classes must be within [2, {len(_SYNTH_COLORS)}]")
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "labels").mkdir(parents=True, exist_ok=True)

    names = ["background"] + [f"shape_{i}" for i in range(1, classes)]
    palette = ClassPalette(names, [_SYNTH_COLORS[i] for i in range(classes)])
    palette.save(out_dir / "palette.json")

    for t in range(tiles):
        label = np.zeros((size, size), dtype=np.int32)
        for cls in range(1, classes):
            painter = _SHAPE_PAINTERS[(cls - 1) % len(_SHAPE_PAINTERS)]
            for _ in range(int(rng.integers(1, 3))):
                cy = int(rng.integers(size // 6, size - size // 6))
                cx = int(rng.integers(size // 6, size - size // 6))
                extent = int(rng.integers(size // 6, size // 3))
                if painter is _paint_box:
                    painter(label, cy, cx, extent, int(rng.integers(size // 6, size // 3)), cls)
                else:
                    painter(label, cy, cx, extent, cls)

        image = np.empty((size, size, 3), dtype=np.float64)
        base_jitter = rng.normal(0.0, 12.0, size=(classes, 3))
        for cls in range(classes):
            color = np.array(_SYNTH_COLORS[cls], dtype=np.float64) + base_jitter[cls]
            image[label == cls] = color
        # low-frequency illumination gradient plus per-pixel noise
        grad = np.linspace(-1.0, 1.0, size)
        image += (rng.uniform(-10, 10) * grad[:, None] + rng.uniform(-10, 10) * grad[None, :])[..., None]
        image += rng.normal(0.0, 9.0, size=(size, size, 3))
        image = np.clip(image, 0, 255).astype(np.uint8)

        Image.fromarray(image).save(out_dir / "images" / f"tile_{t:04d}.png")
        save_indexed_png(out_dir / "labels" / f"tile_{t:04d}.png", label, palette)
    return palette


# -- output writing ---------------------------------------------------------------


def save_indexed_png(path, class_map: np.ndarray, palette: ClassPalette) -> None:
    img = Image.fromarray(class_map.astype(np.uint8), mode="P")
    flat = []
    for color in palette.colors:
        flat.extend(color)
    img.putpalette(flat)
    img.save(path)


def write_outputs(class_map: np.ndarray, prob_map: np.ndarray | None,
                  palette: ClassPalette, out_dir, stem: str,
                  write_probabilities: bool = False) -> list[Path]:
    """Indexed-color class map PNG, plus optional per-class probability rasters."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    class_path = out_dir / f"{stem}_classes.png"
    save_indexed_png(class_path, class_map, palette)
    written.append(class_path)
    if write_probabilities and prob_map is not None:
        for cls in range(prob_map.shape[-1]):
            raster = (np.clip(prob_map[..., cls], 0.0, 1.0) * 255).astype(np.uint8)
            p = out_dir / f"{stem}_prob_{cls}.png"
            Image.fromarray(raster, mode="L").save(p)
            written.append(p)
    return written


def convert_color_labels(images_dir, out_dir, palette: ClassPalette) -> int:
    """Map RGB color masks to index masks using the palette; returns tile count."""
    images_dir = Path(images_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    color_lut = {tuple(c): i for i, c in enumerate(palette.colors)}
    count = 0
    for path in sorted(images_dir.glob("*.png")):
        rgb = _read_image(path)
        label = np.full(rgb.shape[:2], -1, dtype=np.int32)
        for color, idx in color_lut.items():
            label[(rgb == np.array(color, dtype=np.uint8)).all(axis=-1)] = idx
        if (label < 0).any():
            bad = rgb[label < 0][0]
            raise DataError(
                f"{path.name}: color {tuple(int(v) for v in bad)} not present in the palette"
            )
        save_indexed_png(out_dir / path.name, label, palette)
        count += 1
    return count
