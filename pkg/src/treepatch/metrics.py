"""Tree-path F1, exact match, fold-based uncertainty, and forgetting counts.

A tree path runs from the root to either a slot node or to an intent that
dominates no slots. Slot paths carry the slot's serialized contents as their
value (nested intents serialize in full bracket form), so an error deep
inside a compositional slot also invalidates the enclosing slot's path.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .treebank import Node, serialize, _serialize_node


class LengthMismatch(ValueError):
    def __init__(self, n_gold, n_pred):
        super().__init__(f"gold has {n_gold} examples, pred has {n_pred}")


class TooFewExamples(ValueError):
    pass


@dataclass(frozen=True)
class TreePath:
    labels: tuple  # node names, root first
    value: str  # serialized slot contents; "" for slotless-intent paths

    def __str__(self):
        return ">".join(self.labels) + "=" + self.value


@dataclass(frozen=True)
class TpF1Report:
    precision: float
    recall: float
    f1: float
    n_correct: int
    n_predicted: int
    n_expected: int

    def as_dict(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class UncertainScore:
    mean: float
    std: float
    n_folds: int
    per_fold: tuple

    @classmethod
    def from_folds(cls, per_fold):
        per_fold = tuple(float(x) for x in per_fold)
        if len(per_fold) < 2:
            raise TooFewExamples("need at least 2 folds")
        mean = sum(per_fold) / len(per_fold)
        var = sum((x - mean) ** 2 for x in per_fold) / (len(per_fold) - 1)
        return cls(mean=mean, std=math.sqrt(var), n_folds=len(per_fold), per_fold=per_fold)

    def as_dict(self):
        return {"mean": self.mean, "std": self.std, "n_folds": self.n_folds,
                "per_fold": list(self.per_fold)}


@dataclass(frozen=True)
class DegradationReport:
    entries: tuple  # (class, before UncertainScore, after UncertainScore, degraded bool)
    degraded_count: int
    skipped: tuple = ()  # classes present in only one of the two maps

    def as_dict(self):
        return {
            "degraded_count": self.degraded_count,
            "skipped": list(self.skipped),
            "entries": [
                {"class": c, "before": b.as_dict(), "after": a.as_dict(), "degraded": d}
                for c, b, a, d in self.entries
            ],
        }


def _has_slot_below(node):
    for child in node.children:
        if isinstance(child, Node):
            if child.is_slot or _has_slot_below(child):
                return True
    return False


def _slot_value(node):
    parts = []
    for child in node.children:
        parts.append(child if isinstance(child, str) else _serialize_node(child))
    return " ".join(parts)


def extract_paths(tree):
    """Multiset (Counter) of TreePath for one tree."""
    paths = Counter()

    def visit(node, prefix):
        prefix = prefix + (node.name,)
        if node.is_slot:
            paths[TreePath(prefix, _slot_value(node))] += 1
        elif not _has_slot_below(node):
            paths[TreePath(prefix, "")] += 1
            return  # nothing below can emit paths
        for child in node.children:
            if isinstance(child, Node):
                visit(child, prefix)

    visit(tree.root, ())
    return paths


def _micro_counts(gold, pred, keep=None):
    if len(gold) != len(pred):
        raise LengthMismatch(len(gold), len(pred))
    n_correct = n_predicted = n_expected = 0
    for g, p in zip(gold, pred):
        gp = extract_paths(g)
        pp = extract_paths(p)
        if keep is not None:
            gp = Counter({k: v for k, v in gp.items() if keep(k)})
            pp = Counter({k: v for k, v in pp.items() if keep(k)})
        n_expected += sum(gp.values())
        n_predicted += sum(pp.values())
        n_correct += sum((gp & pp).values())
    return n_correct, n_predicted, n_expected


def report_from_counts(n_correct, n_predicted, n_expected):
    p = n_correct / n_predicted if n_predicted else 0.0
    r = n_correct / n_expected if n_expected else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return TpF1Report(precision=p, recall=r, f1=f1, n_correct=n_correct,
                      n_predicted=n_predicted, n_expected=n_expected)


def tp_f1(gold, pred):
    """Micro-averaged tree-path F1 over aligned gold/pred tree lists."""
    return report_from_counts(*_micro_counts(gold, pred))


def path_mentions(path, cls):
    """True if `cls` occurs in the path labels or inside its value string.

    Compositional containment: a slot value like `[IN:GET_EVENT [SL:X ... ] ]`
    mentions both nested labels.
    """
    return cls in path.labels or cls in path.value


def per_class_tp_f1(gold, pred, cls):
    """tp_f1 restricted to paths mentioning `cls`; unknown classes give zeros."""
    return report_from_counts(*_micro_counts(gold, pred, keep=lambda p: path_mentions(p, cls)))


def exact_match(gold, pred):
    """Fraction of aligned examples with identical canonical serializations."""
    if len(gold) != len(pred):
        raise LengthMismatch(len(gold), len(pred))
    if not gold:
        return 0.0
    hits = sum(serialize(g) == serialize(p) for g, p in zip(gold, pred))
    return hits / len(gold)


def fold_indices(n, k, seed):
    """Seeded shuffle then contiguous partition into k near-equal folds."""
    if k < 2:
        raise TooFewExamples(f"k={k} must be >= 2")
    if n < k:
        raise TooFewExamples(f"{n} examples cannot fill {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, k)]


def fold_scores(gold, pred, k, metric, seed=0):
    """Per-fold metric values with sample mean/std.

    `metric` takes (gold_sublist, pred_sublist) and returns a float.
    """
    folds = fold_indices(len(gold), k, seed)
    per_fold = [metric([gold[i] for i in idx], [pred[i] for i in idx]) for idx in folds]
    return UncertainScore.from_folds(per_fold)


def is_degraded(before, after):
    return before.mean - after.mean > 2 * before.std


def degraded_classes(before, after):
    """Count classes whose mean dropped by more than 2x the before-std."""
    shared = sorted(set(before) & set(after))
    skipped = tuple(sorted(set(before) ^ set(after)))
    entries = []
    count = 0
    for cls in shared:
        deg = is_degraded(before[cls], after[cls])
        count += deg
        entries.append((cls, before[cls], after[cls], deg))
    return DegradationReport(entries=tuple(entries), degraded_count=count, skipped=skipped)
