"""Anchoring penalties for fine-tuning, with analytic gradients.

The move-norm penalty pulls the weights toward their pre-fine-tuning values;
the EWC variant weights each coordinate by an importance estimate F, the
running mean of squared task-loss gradients accumulated from the very first
training step. Default "squared" form is the classic quadratic; the "norm"
form is the literal L2 distance with an epsilon guard at zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("none", "movenorm", "ewc")
FORMS = ("squared", "norm")


class RegError(ValueError):
    pass


class LayoutMismatch(RegError):
    pass


class MissingFisher(RegError):
    pass


@dataclass(frozen=True)
class ParamLayout:
    """Ordered named groups partitioning a flat parameter vector."""

    groups: tuple  # ((name, size), ...)

    @property
    def size(self):
        return sum(size for _, size in self.groups)

    @property
    def names(self):
        return tuple(name for name, _ in self.groups)

    def slice_of(self, name):
        offset = 0
        for gname, size in self.groups:
            if gname == name:
                return slice(offset, offset + size)
            offset += size
        raise KeyError(name)


@dataclass
class ParamVector:
    layout: ParamLayout
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.size,):
            raise LayoutMismatch(
                f"values shape {self.values.shape} != layout size {self.layout.size}")

    @classmethod
    def zeros(cls, layout):
        return cls(layout, np.zeros(layout.size))

    def copy(self):
        return ParamVector(self.layout, self.values.copy())

    def group(self, name):
        """View (not copy) of one named group."""
        return self.values[self.layout.slice_of(name)]


def _check_layouts(*vectors):
    layouts = {v.layout.groups for v in vectors}
    if len(layouts) > 1:
        raise LayoutMismatch("parameter vectors have different layouts")


@dataclass(frozen=True)
class RegConfig:
    kind: str = "none"
    strength: float = 0.0  # the lambda multiplier
    form: str = "squared"
    epsilon: float = 1e-12  # norm-form guard at delta = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise RegError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.form not in FORMS:
            raise RegError(f"form must be one of {FORMS}, got {self.form!r}")
        if self.strength < 0:
            raise RegError("strength must be >= 0")
        if self.epsilon <= 0:
            raise RegError("epsilon must be > 0")


def penalty(theta, theta_prev, fisher, config):
    """(value, gradient) of the anchoring penalty at theta.

    squared form: lam * sum(w * delta^2), w = 1 (movenorm) or F (ewc).
    norm form:    lam * sqrt(sum(w * delta^2) + eps), w = 1 or F^2.
    """
    _check_layouts(theta, theta_prev)
    if config.kind == "none" or config.strength == 0.0:
        return 0.0, ParamVector.zeros(theta.layout)
    if config.kind == "ewc":
        if fisher is None:
            raise MissingFisher("ewc penalty needs a fisher vector")
        fisher = np.asarray(fisher, dtype=np.float64)
        if fisher.shape != theta.values.shape:
            raise LayoutMismatch("fisher shape differs from theta")
    lam = config.strength
    delta = theta.values - theta_prev.values
    if config.form == "squared":
        w = fisher if config.kind == "ewc" else 1.0
        value = lam * float(np.sum(w * delta * delta))
        grad = 2.0 * lam * w * delta
    else:
        w = fisher * fisher if config.kind == "ewc" else 1.0
        root = np.sqrt(np.sum(w * delta * delta) + config.epsilon)
        value = lam * float(root)
        grad = lam * w * delta / root
    return value, ParamVector(theta.layout, grad)


@dataclass
class FisherAccumulator:
    """Running sum of squared gradients; fisher() is their mean."""

    layout: ParamLayout
    sum_sq: np.ndarray = None
    steps: int = 0

    def __post_init__(self):
        if self.sum_sq is None:
            self.sum_sq = np.zeros(self.layout.size)
        self.sum_sq = np.asarray(self.sum_sq, dtype=np.float64)
        if self.sum_sq.shape != (self.layout.size,):
            raise LayoutMismatch("sum_sq shape differs from layout")

    def update(self, grad):
        if isinstance(grad, ParamVector):
            _check_layouts(ParamVector.zeros(self.layout), grad)
            grad = grad.values
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.sum_sq.shape:
            raise LayoutMismatch("gradient shape differs from accumulator")
        self.sum_sq += grad * grad
        self.steps += 1
        return self

    def fisher(self):
        if self.steps == 0:
            return np.zeros_like(self.sum_sq)
        return self.sum_sq / self.steps

    def copy(self):
        return FisherAccumulator(self.layout, self.sum_sq.copy(), self.steps)


def fisher_update(acc, grad):
    """Functional form of FisherAccumulator.update (returns a new accumulator)."""
    return acc.copy().update(grad)


@dataclass(frozen=True)
class FreezeMask:
    """Per-group flags; frozen groups get zero gradient."""

    frozen: frozenset = frozenset()

    @classmethod
    def of(cls, *names):
        return cls(frozenset(names))


def apply_freeze(grad, mask):
    """Zero the gradient entries of frozen groups; others unchanged."""
    out = grad.copy()
    for name in mask.frozen:
        out.values[grad.layout.slice_of(name)] = 0.0
    return out
