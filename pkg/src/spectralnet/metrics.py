"""Confusion matrices and the OA / AA / kappa / per-class report."""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

INDIAN_PINES_CLASSES = (
    "Alfalfa",
    "Corn-notill",
    "Corn-mintill",
    "Corn",
    "Grass-pasture",
    "Grass-trees",
    "Grass-pasture-mowed",
    "Hay-windrowed",
    "Oats",
    "Soyabean-notill",
    "Soyabean-mintill",
    "Soyabean-clean",
    "Wheat",
    "Woods",
    "Buildings-Grass-Trees-Drives",
    "Stone-Steel-Towers",
)


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be nonnegative")

    @classmethod
    def from_labels(cls, y_true, y_pred, n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)

    def to_csv(self, class_names=None) -> str:
        k = self.counts.shape[0]
        names = list(class_names) if class_names is not None else [str(i) for i in range(k)]
        buf = io.StringIO()
        buf.write("true\\pred," + ",".join(names) + "\n")
        for name, row in zip(names, self.counts):
            buf.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
        return buf.getvalue()


@dataclass
class MetricsReport:
    overall_accuracy: float
    average_accuracy: float
    kappa: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    support: list[int]
    macro_avg: dict[str, float]
    weighted_avg: dict[str, float]
    confusion: list[list[int]]
    test_loss: float | None = None
    class_names: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def cohen_kappa(counts: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    p_o = np.trace(counts) / total
    p_e = float((counts.sum(axis=1) * counts.sum(axis=0)).sum() / total**2)
    if p_e == 1.0:
        # single occupied class on both axes: perfect agreement by convention
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def confusion_to_metrics(
    cm: ConfusionMatrix | np.ndarray,
    test_loss: float | None = None,
    class_names=None,
) -> MetricsReport:
    counts = cm.counts if isinstance(cm, ConfusionMatrix) else ConfusionMatrix(cm).counts
    total = counts.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    diag = np.diag(counts).astype(np.float64)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    recall = _safe_div(diag, support)
    precision = _safe_div(diag, predicted)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    present = support > 0
    weights = support / total
    return MetricsReport(
        overall_accuracy=float(diag.sum() / total),
        average_accuracy=float(recall[present].mean()),
        kappa=cohen_kappa(counts),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        support=[int(s) for s in support],
        macro_avg={
            "precision": float(precision.mean()),
            "recall": float(recall.mean()),
            "f1": float(f1.mean()),
        },
        weighted_avg={
            "precision": float((precision * weights).sum()),
            "recall": float((recall * weights).sum()),
            "f1": float((f1 * weights).sum()),
        },
        confusion=counts.tolist(),
        test_loss=None if test_loss is None else float(test_loss),
        class_names=list(class_names) if class_names is not None else [],
    )


def render_table(report: MetricsReport, class_names) -> str:
    """Classification-report style table: one row per class then seven summary rows."""
    names = list(class_names)
    if len(names) != len(report.support):
        raise ValueError(f"{len(names)} class names for {len(report.support)} classes")
    total = sum(report.support)
    width = max([len(n) for n in names] + [len("Average accuracy (%)")]) + 2
    head = f"{'Class Labels':<{width}}{'Precision':>10}{'Recall':>10}{'f1-score':>10}{'Support':>10}"
    lines = [head, "-" * len(head)]
    for name, p, r, f, s in zip(names, report.precision, report.recall, report.f1, report.support):
        lines.append(f"{name:<{width}}{p:>10.2f}{r:>10.2f}{f:>10.2f}{s:>10d}")
    lines.append("-" * len(head))
    lines.append(f"{'accuracy':<{width}}{'':>10}{'':>10}{report.overall_accuracy:>10.2f}{total:>10d}")
    for label, avg in (("macro avg", report.macro_avg), ("weighted avg", report.weighted_avg)):
        lines.append(
            f"{label:<{width}}{avg['precision']:>10.2f}{avg['recall']:>10.2f}{avg['f1']:>10.2f}{total:>10d}"
        )
    loss = "n/a" if report.test_loss is None else f"{report.test_loss:.4f}"
    lines.append(f"{'Test loss':<{width}}{'':>30}{loss:>10}")
    for label, value in (
        ("Average accuracy (%)", report.average_accuracy),
        ("Kappa accuracy (%)", report.kappa),
        ("Overall accuracy (%)", report.overall_accuracy),
    ):
        lines.append(f"{label:<{width}}{'':>30}{100 * value:>9.2f}%")
    return "\n".join(lines) + "\n"


def render_report(report: MetricsReport, class_names) -> tuple[str, str, str]:
    """Return ``(text_table, json, confusion_csv)``."""
    table = render_table(report, class_names)
    names = list(class_names)
    report_json = MetricsReport(**{**asdict(report), "class_names": names}).to_json()
    csv = ConfusionMatrix(np.array(report.confusion)).to_csv(names)
    return table, report_json, csv
