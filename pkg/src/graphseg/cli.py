"""Command-line entry points.

Subcommands: train, eval, infer, export-graph, gradcheck, synth,
convert-labels. Run ``graphseg <command> --help`` for flags.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import config as C
from . import data as D
from . import gradcheck as gc
from .evaluate import evaluate_dataset
from .inference import relation_maps, sliding_window
from .model import SegmentationModel
from .train import fit


def _load_model_from_checkpoint(path: str) -> tuple[SegmentationModel, dict]:
    arrays, metadata = ckpt.load_checkpoint(path)
    if "config" not in metadata:
        raise SystemExit(
            f"{path}: checkpoint carries no embedded config; re-train or pass a "
            "checkpoint written by this tool"
        )
    model_cfg, _ = C.from_document(metadata["config"])
    model = SegmentationModel(model_cfg)
    model.load_state(arrays)
    model.eval()
    return model, metadata


def _read_image_tile(path: str) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return rgb.transpose(2, 0, 1).astype(np.float32) / 255.0


def cmd_train(args) -> int:
    model_cfg, train_cfg = C.load_config(args.config)
    dataset = D.load_dataset(args.data, split="train",
                             num_classes=model_cfg.num_classes,
                             ignore_index=train_cfg.ignore_index)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(train_cfg.seed)
    model = SegmentationModel(model_cfg, rng=rng)
    history = fit(model, dataset, train_cfg, log=print)
    meta = {"config": C.to_document(model_cfg, train_cfg)}
    ckpt.save_model(out_dir / "model.ckpt", model, meta)
    log_path = out_dir / "training_log.csv"
    with open(log_path, "w") as fh:
        fh.write("epoch,loss,dice,kl,diag,lr\n")
        for entry in history:
            fh.write(
                f"{entry['epoch']},{entry['loss']:.6f},{entry['dice']:.6f},"
                f"{entry['kl']:.6f},{entry['diag']:.6f},{entry['lr']:.8e}\n"
            )
    print(f"saved {out_dir / 'model.ckpt'} and {log_path}")
    return 0


def cmd_eval(args) -> int:
    model, metadata = _load_model_from_checkpoint(args.checkpoint)
    dataset = D.load_dataset(args.data, split=args.split,
                             num_classes=model.config.num_classes)
    report, _ = evaluate_dataset(model, dataset, window=args.window,
                                 stride=args.stride, tta=args.tta)
    csv_text = report.to_csv(dataset.palette.names)
    Path(args.report).write_text(csv_text)
    print(csv_text, end="")
    print(f"wrote {args.report}")
    return 0


def cmd_infer(args) -> int:
    model, _ = _load_model_from_checkpoint(args.checkpoint)
    tile = _read_image_tile(args.image)
    class_map, prob_map = sliding_window(model, tile, window=args.window,
                                         stride=args.stride, tta=args.tta)
    palette = D.ClassPalette.default(model.config.num_classes)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    D.save_indexed_png(out, class_map, palette)
    if args.probabilities:
        D.write_outputs(class_map, prob_map, palette, out.parent, out.stem,
                        write_probabilities=True)
    print(f"wrote {out}")
    return 0


def cmd_export_graph(args) -> int:
    model, _ = _load_model_from_checkpoint(args.checkpoint)
    image = _read_image_tile(args.image)
    node_ids = [int(tok) for tok in args.nodes.split(",") if tok]
    maps = relation_maps(model, image, node_ids, top_k=args.top)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    from PIL import Image

    for node, heat in maps.items():
        raster = (np.clip(heat, 0.0, 1.0) * 255).astype(np.uint8)
        path = out_dir / f"node_{node}.png"
        Image.fromarray(raster, mode="L").save(path)
        print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    results = gc.run_operation_suite(op_name=args.op, instances=args.instances,
                                     seed=args.seed)
    failed = 0
    for name, err, ok in results:
        print(f"{name:24s} max rel err {err:.3e}  {'PASS' if ok else 'FAIL'}")
        failed += 0 if ok else 1
    print(f"{len(results) - failed}/{len(results)} operations passed")
    return 1 if failed else 0


def cmd_synth(args) -> int:
    D.generate_synthetic_dataset(args.out, tiles=args.tiles, size=args.size,
                                 classes=args.classes, seed=args.seed)
    print(f"wrote {args.tiles} tiles under {args.out}")
    return 0


def cmd_convert_labels(args) -> int:
    palette = D.ClassPalette.load(args.palette)
    count = D.convert_color_labels(args.images, args.out, palette)
    print(f"converted {count} masks into {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphseg")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, help="dataset root (train split)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a labeled split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="metrics CSV path")
    p.add_argument("--split", default="test")
    p.add_argument("--window", type=int, default=448)
    p.add_argument("--stride", type=int, default=100)
    p.add_argument("--tta", type=int, default=4, choices=(1, 4, 8))
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="segment one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--window", type=int, default=448)
    p.add_argument("--stride", type=int, default=100)
    p.add_argument("--tta", type=int, default=4, choices=(1, 4, 8))
    p.add_argument("--probabilities", action="store_true",
                   help="also write per-class probability rasters")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("export-graph", help="write relation heatmaps for nodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--nodes", required=True, help="comma-separated node ids")
    p.add_argument("--out", required=True)
    p.add_argument("--top", type=int, default=9)
    p.set_defaults(fn=cmd_export_graph)

    p = sub.add_parser("gradcheck", help="finite-difference check of all ops")
    p.add_argument("--op", default=None)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("synth", help="generate a synthetic shape dataset")
    p.add_argument("--tiles", type=int, required=True)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("convert-labels", help="map RGB color masks to index masks")
    p.add_argument("--palette", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_convert_labels)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
