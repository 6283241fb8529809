"""Split protocols, accuracy metrics, confusion matrices, late fusion.

Splits partition a dataset index by performer id, camera id, or setup-id
parity. Default performer lists ship as editable config files whose
contents come from the dataset publishers, not from this package.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from importlib import resources
from typing import FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image

from .core import SkelimgError
from .ingest import DatasetIndex, IndexEntry


@dataclass(frozen=True)
class CrossSubject:
    train_performers: FrozenSet[int]

    def __post_init__(self):
        if not self.train_performers:
            raise SkelimgError("cross-subject protocol needs a non-empty performer set")
        object.__setattr__(self, "train_performers", frozenset(self.train_performers))

    def describe(self) -> str:
        ids = " ".join(str(p) for p in sorted(self.train_performers))
        return f"cross-subject(train_performers={ids})"


@dataclass(frozen=True)
class CrossView:
    test_cameras: FrozenSet[int]

    def __post_init__(self):
        if not self.test_cameras:
            raise SkelimgError("cross-view protocol needs a non-empty camera set")
        object.__setattr__(self, "test_cameras", frozenset(self.test_cameras))

    def describe(self) -> str:
        ids = " ".join(str(c) for c in sorted(self.test_cameras))
        return f"cross-view(test_cameras={ids})"


@dataclass(frozen=True)
class CrossSetup:
    train_parity: str  # "even" or "odd"

    def __post_init__(self):
        if self.train_parity not in ("even", "odd"):
            raise SkelimgError(f"train_parity must be even or odd, got {self.train_parity!r}")

    def describe(self) -> str:
        return f"cross-setup(train_parity={self.train_parity})"


SplitProtocol = Union[CrossSubject, CrossView, CrossSetup]


def split(
    index: DatasetIndex, protocol: SplitProtocol
) -> Tuple[List[IndexEntry], List[IndexEntry]]:
    """Partition index entries into (train, test); errors if a side is empty."""
    train: List[IndexEntry] = []
    test: List[IndexEntry] = []
    for entry in index.entries:
        meta = entry.meta
        if isinstance(protocol, CrossSubject):
            is_train = meta.performer_id in protocol.train_performers
        elif isinstance(protocol, CrossView):
            is_train = meta.camera_id not in protocol.test_cameras
        elif isinstance(protocol, CrossSetup):
            even = meta.setup_id % 2 == 0
            is_train = even if protocol.train_parity == "even" else not even
        else:
            raise SkelimgError(f"unknown protocol {protocol!r}")
        (train if is_train else test).append(entry)
    if not train or not test:
        raise SkelimgError(
            f"{protocol.describe()} leaves an empty side "
            f"(train={len(train)}, test={len(test)})"
        )
    return train, test


def parse_protocol_config(text: str) -> SplitProtocol:
    """Key-value protocol file: a `protocol` line plus its defining set."""
    values = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        values[key] = rest.strip()
    kind = values.get("protocol")
    if kind == "cross-subject":
        ids = frozenset(int(v) for v in values.get("train_performers", "").split())
        return CrossSubject(train_performers=ids)
    if kind == "cross-view":
        ids = frozenset(int(v) for v in values.get("test_cameras", "").split())
        return CrossView(test_cameras=ids)
    if kind == "cross-setup":
        return CrossSetup(train_parity=values.get("train_parity", ""))
    raise SkelimgError(f"unknown protocol kind {kind!r} in config")


def format_protocol_config(protocol: SplitProtocol) -> str:
    if isinstance(protocol, CrossSubject):
        ids = " ".join(str(p) for p in sorted(protocol.train_performers))
        return f"protocol cross-subject\ntrain_performers {ids}\n"
    if isinstance(protocol, CrossView):
        ids = " ".join(str(c) for c in sorted(protocol.test_cameras))
        return f"protocol cross-view\ntest_cameras {ids}\n"
    return f"protocol cross-setup\ntrain_parity {protocol.train_parity}\n"


_DEFAULT_CONFIG_FILES = {
    ("cross-subject", "ntu60"): "ntu60_cross_subject.cfg",
    ("cross-subject", "ntu120"): "ntu120_cross_subject.cfg",
    ("cross-subject", "synthetic"): "ntu60_cross_subject.cfg",
    ("cross-view", None): "cross_view.cfg",
    ("cross-setup", None): "cross_setup.cfg",
}


def default_protocol(name: str, dataset_kind: str = "synthetic") -> SplitProtocol:
    """Load the shipped default config for a protocol name."""
    key = (name, dataset_kind if name == "cross-subject" else None)
    filename = _DEFAULT_CONFIG_FILES.get(key)
    if filename is None:
        raise SkelimgError(f"no default protocol config for {name!r} / {dataset_kind!r}")
    text = (
        resources.files("skelimg")
        .joinpath("protocol_configs", filename)
        .read_text(encoding="ascii")
    )
    return parse_protocol_config(text)


@dataclass(frozen=True)
class EvalReport:
    confusion: np.ndarray  # (K, K) int64, rows = true class
    per_class_accuracy: np.ndarray  # (K,) float, nan for absent classes
    macro_accuracy: float
    overall_accuracy: float
    protocol: Optional[SplitProtocol] = None

    @property
    def num_classes(self) -> int:
        return self.confusion.shape[0]


def late_fusion(score_sets: Sequence[np.ndarray]) -> np.ndarray:
    """Unweighted mean of probability matrices (all N x K, rows on the
    simplex); the result stays on the simplex."""
    if len(score_sets) == 0:
        raise SkelimgError("late fusion needs at least one score set")
    first = np.asarray(score_sets[0], dtype=np.float64)
    total = first.copy()
    for scores in score_sets[1:]:
        arr = np.asarray(scores, dtype=np.float64)
        if arr.shape != first.shape:
            raise SkelimgError(
                f"score shape mismatch in fusion: {arr.shape} vs {first.shape}"
            )
        total += arr
    return total / len(score_sets)


def evaluate(
    scores: np.ndarray,
    labels: Sequence[int],
    protocol: Optional[SplitProtocol] = None,
) -> EvalReport:
    """Argmax predictions (ties break to the smaller class index) tallied
    into a confusion matrix with per-class, macro, and overall accuracy.
    Macro accuracy averages only over classes present in the test set."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    if scores.ndim != 2 or scores.shape[0] != labels.shape[0]:
        raise SkelimgError(
            f"scores {scores.shape} and labels {labels.shape} do not align"
        )
    k = scores.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise SkelimgError("labels out of range for score matrix width")
    predictions = np.argmax(scores, axis=1)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, predictions), 1)

    counts = confusion.sum(axis=1)
    per_class = np.full(k, np.nan)
    present = counts > 0
    per_class[present] = confusion[np.arange(k), np.arange(k)][present] / counts[present]
    macro = float(np.mean(per_class[present])) if present.any() else float("nan")
    overall = float(np.trace(confusion) / max(1, labels.size))
    return EvalReport(
        confusion=confusion,
        per_class_accuracy=per_class,
        macro_accuracy=macro,
        overall_accuracy=overall,
        protocol=protocol,
    )


def confusion_csv(report: EvalReport) -> str:
    return "\n".join(
        ",".join(str(int(v)) for v in row) for row in report.confusion
    ) + "\n"


def per_class_csv(report: EvalReport) -> str:
    lines = ["class,accuracy"]
    for c, acc in enumerate(report.per_class_accuracy):
        text = "" if np.isnan(acc) else f"{acc:.6f}"
        lines.append(f"{c},{text}")
    return "\n".join(lines) + "\n"


def summary_csv(report: EvalReport) -> str:
    name = report.protocol.describe() if report.protocol else "none"
    return (
        "protocol,overall_accuracy,macro_accuracy\n"
        f"{name},{report.overall_accuracy:.6f},{report.macro_accuracy:.6f}\n"
    )


def confusion_png_bytes(report: EvalReport) -> bytes:
    """Grayscale heat map: the largest cell maps to white."""
    matrix = report.confusion.astype(np.float64)
    peak = matrix.max()
    if peak > 0:
        matrix = matrix / peak
    pixels = np.round(matrix * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="L").save(buf, format="PNG")
    return buf.getvalue()
