"""Command line entry point: index, synth, encode, train, eval, fuse.

Every subcommand is a thin wrapper over the library modules; all
randomness flows from --seed, and each run drops a manifest.json with the
arguments and format versions needed to reproduce it byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .cnn import (
    CnnConfig,
    history_csv,
    load_checkpoint,
    predict_scores,
    save_model,
    train,
)
from .core import SkelimgError, kinect25_topology
from .evaluation import (
    EvalReport,
    confusion_csv,
    confusion_png_bytes,
    default_protocol,
    evaluate,
    late_fusion,
    parse_protocol_config,
    per_class_csv,
    split,
    summary_csv,
)
from .ingest import DatasetIndex, IndexEntry, build_index, index_csv, parse_skeleton_file, select_bodies
from .representations import (
    SELECTORS,
    encode_pngs,
    encode_sequence,
    read_tensor_file,
    write_tensor_file,
)
from .synth import generate, parse_synth_spec, write_skeleton_text

TENSOR_FORMAT = "skelimg v1"
CHECKPOINT_FORMAT = "skelcnn v1"

# Tensor kinds each selector trains/evaluates on; tsrji-late fans out to
# one model per reference image.
SELECTOR_KINDS: Dict[str, Tuple[str, ...]] = {
    "du": ("du",),
    "tssi": ("tssi",),
    "motion": ("motion",),
    "random": ("random",),
    "refjoints": ("refjoints_stacked",),
    "tsrji-stacked": ("tsrji_stacked",),
    "tsrji-a": ("tsrji_a",),
    "tsrji-b": ("tsrji_b",),
    "tsrji-c": ("tsrji_c",),
    "tsrji-d": ("tsrji_d",),
    "tsrji-late": ("tsrji_a", "tsrji_b", "tsrji_c", "tsrji_d"),
}


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("SKELIMG_THREADS", "1")))
    except ValueError:
        return 1


def _write_manifest(out_dir: Path, command: str, options: dict) -> None:
    manifest = {
        "command": command,
        "options": options,
        "formats": {"tensor": TENSOR_FORMAT, "checkpoint": CHECKPOINT_FORMAT},
        "version": __version__,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _resolve_protocol(args, dataset_kind: str):
    if args.protocol_config:
        return parse_protocol_config(Path(args.protocol_config).read_text(encoding="utf-8"))
    return default_protocol(args.protocol, dataset_kind)


def cmd_index(args) -> int:
    root = Path(args.root)
    names = sorted(p.name for p in root.iterdir() if p.is_file())
    index, skipped = build_index(names, kind=args.kind)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "index.csv").write_text(index_csv(index), encoding="utf-8")
    with open(out_dir / "skipped.txt", "w", encoding="utf-8") as fh:
        for name, reason in skipped:
            fh.write(f"{name}\t{reason}\n")
    _write_manifest(out_dir, "index", {"root": str(root), "kind": args.kind})
    print(f"indexed {len(index)} files, skipped {len(skipped)}")
    return 0


def cmd_synth(args) -> int:
    spec = parse_synth_spec(Path(args.spec).read_text(encoding="utf-8"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = generate(spec)
    for seq, _ in samples:
        path = out_dir / f"{seq.meta.source_name}.skeleton"
        path.write_text(write_skeleton_text(seq), encoding="utf-8")
    _write_manifest(
        out_dir,
        "synth",
        {"spec": str(args.spec), "seed": spec.seed, "samples": len(samples)},
    )
    print(f"wrote {len(samples)} skeleton files to {out_dir}")
    return 0


def _load_index_entries(root: Path, kind: str) -> Tuple[DatasetIndex, list]:
    names = sorted(p.name for p in root.iterdir() if p.suffix == ".skeleton")
    return build_index(names, kind=kind)


def cmd_encode(args) -> int:
    root = Path(args.root)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    index, skipped = _load_index_entries(root, args.kind)
    if not index.entries:
        raise SkelimgError(f"no parseable .skeleton files under {root}")
    topology = kinect25_topology()

    def encode_one(entry: IndexEntry) -> List[str]:
        content = (root / entry.path).read_text(encoding="utf-8")
        seq = parse_skeleton_file(content, topology, meta=entry.meta)
        seq = select_bodies(seq, args.persons)
        images = encode_sequence(
            seq, args.repr, persons=args.persons, seed=args.seed
        )
        rows = []
        for image in images:
            stem = f"{entry.meta.source_name}__{image.kind}"
            write_tensor_file(image, out_dir / f"{stem}.skelimg")
            if args.png:
                for suffix, payload in encode_pngs(image):
                    (out_dir / f"{stem}{suffix}.png").write_bytes(payload)
            m = entry.meta
            rows.append(
                f"{m.source_name},{m.setup_id},{m.camera_id},{m.performer_id},"
                f"{m.replication_id},{m.action_id},{image.kind},{stem}.skelimg"
            )
        return rows

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            all_rows = list(pool.map(encode_one, index.entries))
    else:
        all_rows = [encode_one(entry) for entry in index.entries]

    lines = ["source_name,setup,camera,performer,replication,action,kind,file"]
    for rows in all_rows:
        lines.extend(rows)
    (out_dir / "encodings.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(
        out_dir,
        "encode",
        {
            "root": str(root),
            "repr": args.repr,
            "persons": args.persons,
            "seed": args.seed,
            "kind": args.kind,
            "png": bool(args.png),
            "skipped": len(skipped),
        },
    )
    print(f"encoded {len(index)} sequences as {args.repr} into {out_dir}")
    return 0


def _read_encodings(enc_dir: Path) -> List[dict]:
    path = enc_dir / "encodings.csv"
    if not path.exists():
        raise SkelimgError(f"missing encodings.csv in {enc_dir}; run encode first")
    rows = []
    lines = path.read_text(encoding="utf-8").splitlines()
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 8:
            raise SkelimgError(f"bad encodings.csv row: {line!r}")
        rows.append(
            {
                "source_name": parts[0],
                "setup": int(parts[1]),
                "camera": int(parts[2]),
                "performer": int(parts[3]),
                "replication": int(parts[4]),
                "action": int(parts[5]),
                "kind": parts[6],
                "file": parts[7],
            }
        )
    return rows


def _rows_to_entries(rows: List[dict]) -> List[IndexEntry]:
    from .core import SampleMeta

    entries = []
    for row in rows:
        meta = SampleMeta(
            setup_id=row["setup"],
            camera_id=row["camera"],
            performer_id=row["performer"],
            replication_id=row["replication"],
            action_id=row["action"],
            source_name=row["source_name"],
        )
        entries.append(IndexEntry(meta=meta, path=row["file"]))
    return entries


def _load_tensor_set(
    enc_dir: Path, rows: List[dict], kind: str, wanted: Sequence[str]
) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """Tensors + labels for `wanted` source names of one kind, sorted by name."""
    by_name = {r["source_name"]: r for r in rows if r["kind"] == kind}
    missing = [name for name in wanted if name not in by_name]
    if missing:
        raise SkelimgError(
            f"no {kind!r} encoding for {missing[0]!r} (and {len(missing) - 1} more)"
        )
    names = sorted(wanted)
    arrays = []
    labels = []
    for name in names:
        row = by_name[name]
        image = read_tensor_file(enc_dir / row["file"])
        arrays.append(image.data.astype(np.float64))
        labels.append(row["action"] - 1)
    return np.stack(arrays), np.asarray(labels, dtype=np.intp), names


def _split_names(rows: List[dict], protocol) -> Tuple[List[str], List[str]]:
    seen = {}
    for row in rows:
        seen.setdefault(row["source_name"], row)
    entries = _rows_to_entries(list(seen.values()))
    index = DatasetIndex(entries=tuple(sorted(entries, key=lambda e: e.meta.source_name)),
                         dataset_kind="synthetic")
    train_entries, test_entries = split(index, protocol)
    return (
        [e.meta.source_name for e in train_entries],
        [e.meta.source_name for e in test_entries],
    )


def cmd_train(args) -> int:
    enc_dir = Path(args.root)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _read_encodings(enc_dir)
    kinds = SELECTOR_KINDS.get(args.repr)
    if kinds is None:
        raise SkelimgError(f"unknown representation selector {args.repr!r}")
    protocol = _resolve_protocol(args, args.kind)
    train_names, _ = _split_names(rows, protocol)
    num_classes = max(r["action"] for r in rows)

    filters = tuple(int(v) for v in args.filters.split(","))
    if len(filters) != 3:
        raise SkelimgError(f"--filters needs 3 comma-separated values, got {args.filters!r}")

    for kind in kinds:
        x, y, _ = _load_tensor_set(enc_dir, rows, kind, train_names)
        cfg = CnnConfig(
            input_shape=x.shape[1:],
            num_classes=num_classes,
            conv_filters=filters,
            hidden_units=args.hidden,
            dropout_rate=args.dropout,
            learning_rate=args.lr,
            batch_size=args.batch,
            epochs=args.epochs,
            seed=args.seed,
            momentum=args.momentum,
        )
        model, history = train(cfg, (x, y))
        suffix = f"_{kind}" if len(kinds) > 1 else ""
        (out_dir / f"model{suffix}.ckpt").write_bytes(
            save_model(model, extras={"repr": kind})
        )
        (out_dir / f"history{suffix}.csv").write_text(
            history_csv(history), encoding="utf-8"
        )
        print(
            f"trained {kind}: {cfg.epochs} epochs, "
            f"final loss {history.loss[-1]:.4f}, "
            f"train acc {history.train_acc[-1]:.4f}"
        )

    _write_manifest(
        out_dir,
        "train",
        {
            "root": str(enc_dir),
            "repr": args.repr,
            "protocol": protocol.describe(),
            "epochs": args.epochs,
            "lr": args.lr,
            "batch": args.batch,
            "seed": args.seed,
            "filters": args.filters,
            "hidden": args.hidden,
            "dropout": args.dropout,
            "momentum": args.momentum,
            "num_classes": num_classes,
        },
    )
    return 0


def _write_scores_csv(path: Path, names: List[str], labels, scores) -> None:
    k = scores.shape[1]
    header = "source_name,true_label," + ",".join(f"p{i}" for i in range(k))
    lines = [header]
    for name, label, row in zip(names, labels, scores):
        probs = ",".join(f"{v!r}" for v in row)
        lines.append(f"{name},{int(label)},{probs}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_scores_csv(path: Path) -> Tuple[List[str], np.ndarray, np.ndarray]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    rows = [line for line in lines if line.strip()]
    if rows and rows[0].startswith("source_name,"):
        rows = rows[1:]
    if not rows:
        raise SkelimgError(f"score file {path} has no rows")
    names: List[str] = []
    labels: List[int] = []
    scores: List[List[float]] = []
    for line in rows:
        parts = line.split(",")
        if len(parts) < 3:
            raise SkelimgError(f"bad score row in {path}: {line!r}")
        names.append(parts[0])
        labels.append(int(parts[1]))
        scores.append([float(v) for v in parts[2:]])
    return names, np.asarray(labels, dtype=np.intp), np.asarray(scores, dtype=np.float64)


def _write_report(out_dir: Path, report: EvalReport) -> None:
    (out_dir / "confusion.csv").write_text(confusion_csv(report), encoding="utf-8")
    (out_dir / "confusion.png").write_bytes(confusion_png_bytes(report))
    (out_dir / "per_class.csv").write_text(per_class_csv(report), encoding="utf-8")
    (out_dir / "summary.csv").write_text(summary_csv(report), encoding="utf-8")


def cmd_eval(args) -> int:
    enc_dir = Path(args.root)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _read_encodings(enc_dir)
    protocol = _resolve_protocol(args, args.kind)
    _, test_names = _split_names(rows, protocol)

    score_sets = []
    labels = None
    names = None
    for ckpt_path in args.checkpoint:
        model, extras = load_checkpoint(Path(ckpt_path).read_bytes())
        kind = extras.get("repr")
        if kind is None:
            raise SkelimgError(f"checkpoint {ckpt_path} does not record its representation")
        x, y, sorted_names = _load_tensor_set(enc_dir, rows, kind, test_names)
        scores = predict_scores(model, x)
        score_sets.append(scores)
        labels, names = y, sorted_names

    fused = late_fusion(score_sets)
    report = evaluate(fused, labels, protocol=protocol)
    _write_scores_csv(out_dir / "scores.csv", names, labels, fused)
    _write_report(out_dir, report)
    _write_manifest(
        out_dir,
        "eval",
        {
            "root": str(enc_dir),
            "checkpoints": [str(c) for c in args.checkpoint],
            "protocol": protocol.describe(),
            "test_samples": len(names),
        },
    )
    print(
        f"evaluated {len(names)} samples: overall {report.overall_accuracy:.4f}, "
        f"macro {report.macro_accuracy:.4f}"
    )
    return 0


def cmd_fuse(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_names: Optional[List[str]] = None
    base_labels = None
    score_sets = []
    for path in args.scores:
        names, labels, scores = _read_scores_csv(Path(path))
        order = np.argsort(names)
        names = [names[i] for i in order]
        labels = labels[order]
        scores = scores[order]
        if base_names is None:
            base_names, base_labels = names, labels
        else:
            if names != base_names:
                raise SkelimgError(f"score files disagree on sample names ({path})")
            if not np.array_equal(labels, base_labels):
                raise SkelimgError(f"score files disagree on labels ({path})")
        score_sets.append(scores)
    fused = late_fusion(score_sets)
    report = evaluate(fused, base_labels)
    _write_scores_csv(out_dir / "scores.csv", base_names, base_labels, fused)
    _write_report(out_dir, report)
    _write_manifest(out_dir, "fuse", {"scores": [str(s) for s in args.scores]})
    print(
        f"fused {len(score_sets)} score sets over {len(base_names)} samples: "
        f"overall {report.overall_accuracy:.4f}, macro {report.macro_accuracy:.4f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelimg",
        description="Skeleton-image action recognition workbench",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="index a directory of .skeleton files")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", default="synthetic", choices=["ntu60", "ntu120", "synthetic"])
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("synth", help="generate synthetic .skeleton fixtures")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="encode skeleton files into image tensors")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--repr", required=True, choices=list(SELECTORS))
    p.add_argument("--persons", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", default="synthetic", choices=["ntu60", "ntu120", "synthetic"])
    p.add_argument("--png", action="store_true")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train model(s) on encoded tensors")
    p.add_argument("--root", required=True, help="encode output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--repr", required=True, choices=list(SELECTORS))
    p.add_argument("--protocol", default="cross-subject",
                   choices=["cross-subject", "cross-view", "cross-setup"])
    p.add_argument("--protocol-config")
    p.add_argument("--kind", default="synthetic", choices=["ntu60", "ntu120", "synthetic"])
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--filters", default="32,64,128")
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--momentum", type=float, default=0.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoint(s) on the test split")
    p.add_argument("--checkpoint", required=True, nargs="+")
    p.add_argument("--root", required=True, help="encode output directory")
    p.add_argument("--out", required=True)
    p.add_argument("--protocol", default="cross-subject",
                   choices=["cross-subject", "cross-view", "cross-setup"])
    p.add_argument("--protocol-config")
    p.add_argument("--kind", default="synthetic", choices=["ntu60", "ntu120", "synthetic"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", help="late-fuse score CSV files")
    p.add_argument("scores", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SkelimgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
