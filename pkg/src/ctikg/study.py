"""Human-assessment set construction and annotation scoring."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from ctikg.corpus import truncate_sample
from ctikg.generator import GenSettings, make_fake_counterpart

TASK_TRUE = 28
TASK_FAKE = 28

# Confusion counts for which an externally reported accuracy figure of
# 36.8% circulates; it is not derivable from the counts themselves
# ((206 + 60) / 560 = 47.5%), so the scorer flags it instead of adopting it.
_KNOWN_DISCREPANT_COUNTS = (206, 74, 220, 60)


@dataclass
class TaskItem:
    item_id: str
    text: str
    truth: str  # "true_cti" | "fake_cti"
    counterpart_of: str  # source document id linking a true/fake pair


@dataclass
class AnnotationTask:
    name: str
    items: list[TaskItem]
    seed: int

    def participant_view(self) -> list[dict]:
        """Texts only; truths withheld."""
        return [{"item_id": it.item_id, "text": it.text} for it in self.items]


def build_assessment(true_docs, params, vocab, seed: int,
                     settings: GenSettings | None = None
                     ) -> tuple[AnnotationTask, AnnotationTask]:
    """Two annotation tasks of 28 true + 28 generated items each.

    Takes 56 usable true documents (usable: truncation finds a sentence
    boundary), generates a fake counterpart for each, and places every
    counterpart in the opposite task from its source. Item order within a
    task is shuffled by seed.
    """
    settings = settings or GenSettings(seed=seed)
    usable: list[tuple] = []
    for doc in true_docs:
        sample = make_fake_counterpart(params, vocab, doc, settings)
        if sample is not None:
            usable.append((doc, sample))
        if len(usable) == 2 * TASK_TRUE:
            break
    if len(usable) < 2 * TASK_TRUE:
        raise ValueError(
            f"need {2 * TASK_TRUE} usable true documents, found {len(usable)}"
        )

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(usable))
    task_items: dict[str, list[TaskItem]] = {"A": [], "B": []}
    for rank, idx in enumerate(order):
        doc, sample = usable[idx]
        true_task, fake_task = ("A", "B") if rank < TASK_TRUE else ("B", "A")
        truncated, _ = truncate_sample(doc)
        task_items[true_task].append(
            TaskItem(f"true-{doc.id}", truncated, "true_cti", doc.id)
        )
        task_items[fake_task].append(
            TaskItem(f"fake-{doc.id}", sample.full_text, "fake_cti", doc.id)
        )
    tasks = []
    for name in ("A", "B"):
        items = task_items[name]
        shuffled = [items[i] for i in rng.permutation(len(items))]
        tasks.append(AnnotationTask(name=name, items=shuffled, seed=seed))
    return tasks[0], tasks[1]


def export_tasks(tasks, path) -> None:
    payload = {t.name: t.participant_view() for t in tasks}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)


@dataclass
class ConfusionMatrix:
    tp: int = 0  # actual true, labeled true
    fn: int = 0  # actual true, labeled false
    fp: int = 0  # actual fake, labeled true
    tn: int = 0  # actual fake, labeled false

    def __post_init__(self):
        if min(self.tp, self.fn, self.fp, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn


@dataclass
class ScoreReport:
    matrix: ConfusionMatrix
    accuracy: float
    fraction_correct: float
    fraction_incorrect: float
    fake_labeled_true: float
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        m = self.matrix
        return {
            "matrix": {"tp": m.tp, "fn": m.fn, "fp": m.fp, "tn": m.tn, "total": m.total},
            "accuracy": self.accuracy,
            "fraction_correct": self.fraction_correct,
            "fraction_incorrect": self.fraction_incorrect,
            "fake_labeled_true": self.fake_labeled_true,
            "notes": self.notes,
        }


def rates_from_matrix(matrix: ConfusionMatrix) -> ScoreReport:
    """Pure arithmetic on the counts; flags the known discrepant matrix."""
    total = matrix.total
    if total == 0:
        raise ValueError("no labels scored")
    correct = (matrix.tp + matrix.tn) / total
    fake_total = matrix.fp + matrix.tn
    report = ScoreReport(
        matrix=matrix,
        accuracy=correct,
        fraction_correct=correct,
        fraction_incorrect=(matrix.fn + matrix.fp) / total,
        fake_labeled_true=matrix.fp / fake_total if fake_total else 0.0,
    )
    if (matrix.tp, matrix.fn, matrix.fp, matrix.tn) == _KNOWN_DISCREPANT_COUNTS:
        report.notes.append(
            "computed accuracy for these counts is 47.5%; the separately "
            "reported 36.8% accuracy figure is not derivable from them"
        )
    return report


def score_annotations(tasks, labels: dict[tuple[str, str], str]) -> ScoreReport:
    """Aggregate a confusion matrix over participants.

    `labels` maps (participant, item_id) -> "true" | "fake". Every
    participant must label every item of every task they appear in.
    """
    truths = {it.item_id: it.truth for task in tasks for it in task.items}
    participants = sorted({p for p, _ in labels})
    missing = [
        (p, item_id) for p in participants for item_id in truths
        if (p, item_id) not in labels
    ]
    if missing:
        raise ValueError(f"missing labels for items: {sorted(missing)}")

    matrix = ConfusionMatrix()
    for (participant, item_id), label in labels.items():
        if item_id not in truths:
            raise ValueError(f"unknown item id {item_id!r}")
        if label not in ("true", "fake"):
            raise ValueError(f"label must be 'true' or 'fake', got {label!r}")
        actual_true = truths[item_id] == "true_cti"
        labeled_true = label == "true"
        if actual_true and labeled_true:
            matrix.tp += 1
        elif actual_true:
            matrix.fn += 1
        elif labeled_true:
            matrix.fp += 1
        else:
            matrix.tn += 1
    return rates_from_matrix(matrix)


def read_labels_csv(path) -> dict[tuple[str, str], str]:
    """Labels CSV: participant,item_id,label (header optional)."""
    labels: dict[tuple[str, str], str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row == ["participant", "item_id", "label"]:
                continue
            if len(row) != 3:
                raise ValueError(f"bad CSV row: {row!r}")
            labels[(row[0], row[1])] = row[2]
    return labels
