"""Per-client accuracy / F1, cross-client averages and repeat averaging.

All scores are percentages. F1 treats class 1 as positive and predictions
threshold the predicted probability at 0.5.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import UsageError


def _labels(preds, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds).astype(np.int64).ravel()
    t = np.asarray(truth).astype(np.int64).ravel()
    if len(p) == 0 or len(p) != len(t):
        raise UsageError("predictions and truth must be equal-length and nonempty")
    return p, t


def accuracy(preds, truth) -> float:
    p, t = _labels(preds, truth)
    return 100.0 * float(np.sum(p == t)) / len(t)


def f1_score(preds, truth, positive_class: int = 1) -> float:
    p, t = _labels(preds, truth)
    tp = int(np.sum((p == positive_class) & (t == positive_class)))
    fp = int(np.sum((p == positive_class) & (t != positive_class)))
    fn = int(np.sum((p != positive_class) & (t == positive_class)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2 * precision * recall / (precision + recall)


@dataclass
class ClientScore:
    client_id: int
    accuracy: float
    f1: float


@dataclass
class EvalReport:
    """Final per-client scores plus per-round curves for one method.

    ``curve_test_acc[t]`` and ``curve_train_loss[t]`` are averages across
    clients of the global model after round ``t``'s aggregation.
    """

    method: str
    clients: list[ClientScore]
    curve_test_acc: list[float] = field(default_factory=list)
    curve_train_loss: list[float] = field(default_factory=list)
    repeats: int = 1

    @property
    def avg_accuracy(self) -> float:
        return float(np.mean([c.accuracy for c in self.clients]))

    @property
    def avg_f1(self) -> float:
        return float(np.mean([c.f1 for c in self.clients]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["avg_accuracy"] = self.avg_accuracy
        d["avg_f1"] = self.avg_f1
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def aggregate_runs(reports: Sequence[EvalReport]) -> EvalReport:
    """Column-wise mean of several repeats of the same method."""
    if not reports:
        raise UsageError("no reports to aggregate")
    first = reports[0]
    ids = [c.client_id for c in first.clients]
    n_rounds = len(first.curve_test_acc)
    for r in reports[1:]:
        if [c.client_id for c in r.clients] != ids:
            raise UsageError("reports cover different clients")
        if len(r.curve_test_acc) != n_rounds or len(r.curve_train_loss) != len(
            first.curve_train_loss
        ):
            raise UsageError("reports have different round counts")
    if len(reports) == 1:
        return first

    acc = np.mean([[c.accuracy for c in r.clients] for r in reports], axis=0)
    f1 = np.mean([[c.f1 for c in r.clients] for r in reports], axis=0)
    curve_acc = np.mean([r.curve_test_acc for r in reports], axis=0)
    curve_loss = np.mean([r.curve_train_loss for r in reports], axis=0)
    return EvalReport(
        method=first.method,
        clients=[ClientScore(i, float(a), float(f)) for i, a, f in zip(ids, acc, f1)],
        curve_test_acc=curve_acc.tolist(),
        curve_train_loss=curve_loss.tolist(),
        repeats=sum(r.repeats for r in reports),
    )


def table_csv(reports: Sequence[EvalReport]) -> str:
    """Rows ``Client, Method, ACC, F1`` grouped by client with a final ``Avg`` block."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Client", "Method", "ACC", "F1"])
    if reports:
        for i, c0 in enumerate(reports[0].clients):
            for r in reports:
                c = r.clients[i]
                writer.writerow([f"C{c0.client_id}", r.method, f"{c.accuracy:.2f}", f"{c.f1:.2f}"])
        for r in reports:
            writer.writerow(["Avg", r.method, f"{r.avg_accuracy:.2f}", f"{r.avg_f1:.2f}"])
    return buf.getvalue()


def curves_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["round", "avg_test_acc", "avg_train_loss"])
    for t, (a, l) in enumerate(zip(report.curve_test_acc, report.curve_train_loss)):
        writer.writerow([t, f"{a:.6f}", f"{l:.8f}"])
    return buf.getvalue()
