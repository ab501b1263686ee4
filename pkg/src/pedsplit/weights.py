"""Class-imbalance weighting and weighted binary cross-entropy.

Three weight functions map an attribute's training positive ratio ``r`` to a
pair of weights, one applied where the label is 1 and one where it is 0:

=====  ===============================  ===============================
kind   positive weight                  negative weight
=====  ===============================  ===============================
wf1    exp(1 - r)                       exp(r)
wf2    sqrt(1 / (2 r))                  sqrt(1 / (2 (1 - r)))
wf3    r^-a / (r^-a + (1 - r)^-a)       (1 - r)^-a / (r^-a + (1 - r)^-a)
none   1                                1
=====  ===============================  ===============================
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from ._validation import check_binary_matrix, check_probability_matrix, check_same_shape
from .exceptions import DegenerateRatio, ParseError, ValidationError

KINDS = ("wf1", "wf2", "wf3", "none")
CLAMP_EPS = 1e-7
WEIGHTS_FORMAT = "pedsplit.weights"


@dataclass(frozen=True)
class WeightFunctionSpec:
    kind: str = "none"
    alpha: Optional[float] = None

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValidationError(f"unknown weight function {self.kind!r}")
        if kind == "wf3":
            if self.alpha is None or not math.isfinite(self.alpha) or self.alpha < 0:
                raise ValidationError("wf3 needs a finite, nonnegative alpha")
            object.__setattr__(self, "alpha", float(self.alpha))
        elif self.alpha is not None:
            raise ValidationError("alpha only applies to wf3")


@dataclass(frozen=True, eq=False)
class WeightTable:
    positive: np.ndarray
    negative: np.ndarray
    ratios: np.ndarray
    spec: WeightFunctionSpec
    attribute_names: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("positive", "negative", "ratios"):
            a = np.array(getattr(self, name), dtype=np.float64)
            if a.ndim != 1:
                raise ValidationError(f"{name} must be 1-D")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if not (self.positive.shape == self.negative.shape == self.ratios.shape):
            raise ValidationError("weight table columns differ in length")
        for name in ("positive", "negative"):
            a = getattr(self, name)
            if not (np.isfinite(a).all() and (a > 0).all()):
                raise ValidationError(f"{name} weights must be finite and > 0")
        if self.attribute_names and len(self.attribute_names) != self.ratios.shape[0]:
            raise ValidationError("attribute_names length does not match the weights")
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))

    def __len__(self) -> int:
        return self.ratios.shape[0]

    def for_labels(self, labels: np.ndarray) -> np.ndarray:
        """Element-wise weight matrix: positive weight where y=1, negative where y=0."""
        return np.where(labels == 1, self.positive, self.negative)


def _check_ratios(ratios: np.ndarray, kind: str) -> None:
    if not np.isfinite(ratios).all() or (ratios < 0).any() or (ratios > 1).any():
        raise ValidationError("positive ratios must lie in [0, 1]")
    if kind in ("wf2", "wf3") and ((ratios <= 0) | (ratios >= 1)).any():
        bad = ratios[(ratios <= 0) | (ratios >= 1)]
        raise DegenerateRatio(f"{kind} needs every ratio strictly inside (0, 1); found {bad[0]!r}")


def compute_weights(ratios, spec: WeightFunctionSpec, attribute_names=()) -> WeightTable:
    r = np.asarray(ratios, dtype=np.float64).reshape(-1)
    _check_ratios(r, spec.kind)
    if spec.kind == "none":
        pos = np.ones_like(r)
        neg = np.ones_like(r)
    elif spec.kind == "wf1":
        pos = np.exp(1.0 - r)
        neg = np.exp(r)
    elif spec.kind == "wf2":
        pos = np.sqrt(1.0 / (2.0 * r))
        neg = np.sqrt(1.0 / (2.0 * (1.0 - r)))
    else:
        # r^-a / (r^-a + (1-r)^-a) == (1-r)^a / ((1-r)^a + r^a); the second form
        # avoids overflow for small r and large a.
        a = spec.alpha
        num_pos = (1.0 - r) ** a
        num_neg = r**a
        den = num_pos + num_neg
        with np.errstate(invalid="ignore", divide="ignore"):
            pos = num_pos / den
            neg = num_neg / den
        # both powers underflow for very large a; use the logistic form there
        bad = ~(np.isfinite(pos) & np.isfinite(neg) & (den > 0))
        if bad.any():
            logit = a * (np.log1p(-r[bad]) - np.log(r[bad]))
            pos[bad] = expit(logit)
            neg[bad] = expit(-logit)
        if ((pos == 0) | (neg == 0)).any():
            raise ValidationError(f"wf3 weights underflow to 0 with alpha={a}; use a smaller alpha")
    return WeightTable(pos, neg, r, spec, tuple(attribute_names))


@dataclass(frozen=True, eq=False)
class BCELoss:
    per_sample: np.ndarray
    mean_per_sample: float
    mean_per_element: float
    eps: float


def _prepare(probs, labels, table):
    p = check_probability_matrix(probs)
    y = check_binary_matrix(labels, "labels")
    check_same_shape(p, y, ("probabilities", "labels"))
    if p.shape[1] != len(table):
        raise ValidationError(f"weight table has {len(table)} attributes, probabilities have {p.shape[1]}")
    return p, y


def weighted_bce(probs, labels, table: WeightTable, eps: float = CLAMP_EPS) -> BCELoss:
    """Weighted binary cross-entropy.

    The per-sample loss sums over attributes.  Both reductions are returned:
    the mean of per-sample sums, and the mean over all N*M elements.
    Probabilities are clamped to ``[eps, 1 - eps]`` first.
    """
    p, y = _prepare(probs, labels, table)
    q = np.clip(p, eps, 1.0 - eps)
    w = table.for_labels(y)
    elem = -w * (y * np.log(q) + (1 - y) * np.log1p(-q))
    per_sample = elem.sum(axis=1)
    return BCELoss(per_sample, float(per_sample.mean()), float(elem.mean()), eps)


def weighted_bce_grad(probs, labels, table: WeightTable, eps: float = CLAMP_EPS) -> np.ndarray:
    """d(per-sample loss)/dp for every element; zero where the clamp is active."""
    p, y = _prepare(probs, labels, table)
    w = table.for_labels(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        grad = -w * (y / p - (1 - y) / (1 - p))
    inside = (p > eps) & (p < 1.0 - eps)
    return np.where(inside, grad, 0.0)


class ImbalanceWeights(BaseEstimator):
    """Fit weight tables from a training label matrix.

    Parameters
    ----------
    kind : {'wf1', 'wf2', 'wf3', 'none'}
    alpha : float, optional
        Exponent for ``wf3``.
    """

    def __init__(self, kind="wf1", alpha=None):
        self.kind = kind
        self.alpha = alpha

    def fit(self, X=None, y=None):
        labels = check_binary_matrix(y if y is not None else X, "labels")
        if labels.shape[0] == 0:
            raise ValidationError("cannot fit weights on an empty label matrix")
        ratios = labels.mean(axis=0)
        self.table_ = compute_weights(ratios, WeightFunctionSpec(self.kind, self.alpha))
        self.positive_weight_ = self.table_.positive
        self.negative_weight_ = self.table_.negative
        return self

    def loss(self, probs, labels) -> float:
        return weighted_bce(probs, labels, self.table_).mean_per_sample


# ---------------------------------------------------------------------------
# persistence


def _table_dict(table: WeightTable) -> dict:
    names = table.attribute_names or tuple(f"attr{j}" for j in range(len(table)))
    return {
        "format": WEIGHTS_FORMAT,
        "version": 1,
        "weight_function": table.spec.kind,
        "alpha": table.spec.alpha,
        "clamp_eps": CLAMP_EPS,
        "attributes": [
            {"name": n, "ratio": float(r), "positive": float(wp), "negative": float(wn)}
            for n, r, wp, wn in zip(names, table.ratios, table.positive, table.negative)
        ],
    }


def dumps_weights(table: WeightTable) -> str:
    # json writes floats with repr(), which round-trips every double exactly
    return json.dumps(_table_dict(table), indent=2, ensure_ascii=False) + "\n"


def export_weights(table: WeightTable, path) -> None:
    Path(path).write_text(dumps_weights(table), encoding="utf-8", newline="\n")


def load_weights(path) -> WeightTable:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(str(exc), path, exc.lineno) from None
    if not isinstance(doc, dict) or doc.get("format") != WEIGHTS_FORMAT:
        raise ParseError("not a weights file", path)
    try:
        spec = WeightFunctionSpec(doc["weight_function"], doc.get("alpha"))
        attrs = doc["attributes"]
        ratios = np.array([a["ratio"] for a in attrs], dtype=np.float64)
        pos = [a["positive"] for a in attrs]
        neg = [a["negative"] for a in attrs]
        names = tuple(a["name"] for a in attrs)
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed weights file: {exc}", path) from None
    _check_ratios(ratios, spec.kind)
    return WeightTable(pos, neg, ratios, spec, names)
