"""Multi-label attribute evaluation.

Instance-level scores (accuracy, precision, recall, F1) average per-sample
ratios over samples; the label-level score mA averages, over attributes,
the mean of positive and negative recall.  ``mPR`` and ``mNR`` are those two
recalls averaged separately, so ``mA == (mPR + mNR) / 2``.

Per-sample ratios can be 0/0 (a sample with no true and no predicted
positives).  How those are scored is a policy:

``eps-zero``
    the ratio counts as 0 (what ``tp / (tp + fp + eps)`` style code yields)
``one``
    the ratio counts as 1
``skip``
    the sample is left out of that metric's mean

Means are taken with numpy's pairwise summation over contiguous float64
arrays, so results do not depend on thread scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_binary_matrix, check_probability_matrix, check_same_shape
from .core import Dataset
from .exceptions import DegenerateAttribute, ValidationError
from .splitter import SplitSpec

ZERO_DIVISION_POLICIES = ("eps-zero", "one", "skip")
STRATA = ("common", "unique", "unidentified", "all")


@dataclass(frozen=True, eq=False)
class PredictionSet:
    """Probability rows bound to dataset positions.

    ``positions[i]`` is the dataset position of row ``i``.  ``missing`` and
    ``extra`` record image ids that were expected but absent, or present but
    unknown to the dataset, when the set was read from a file.
    """

    probabilities: np.ndarray
    positions: np.ndarray
    missing: tuple[str, ...] = ()
    extra: tuple[str, ...] = ()

    def __post_init__(self):
        p = check_probability_matrix(self.probabilities)
        pos = np.asarray(self.positions, dtype=np.int64)
        if pos.shape != (p.shape[0],):
            raise ValidationError("positions must list one dataset position per probability row")
        p = p.copy()
        p.setflags(write=False)
        pos = pos.copy()
        pos.setflags(write=False)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "positions", pos)

    def rows(self, positions: Sequence[int]) -> np.ndarray:
        """Probability rows for ``positions``, in that order."""
        lookup = {int(p): i for i, p in enumerate(self.positions)}
        try:
            idx = [lookup[int(p)] for p in positions]
        except KeyError as exc:
            raise ValidationError(f"predictions do not cover dataset position {exc.args[0]}") from None
        return self.probabilities[np.asarray(idx, dtype=np.int64)].reshape(len(idx), self.probabilities.shape[1])


@dataclass(frozen=True, eq=False)
class BinaryPredictions:
    values: np.ndarray
    threshold: float


def sigmoid(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(z).all():
        raise ValidationError("logits must be finite")
    return expit(z)


def threshold_predictions(probs, t_cls: float = 0.5) -> BinaryPredictions:
    """Binarize probabilities; a probability equal to ``t_cls`` is positive."""
    if not 0.0 < t_cls < 1.0:
        raise ValidationError("t_cls must lie in (0, 1)")
    if isinstance(probs, PredictionSet):
        probs = probs.probabilities
    p = check_probability_matrix(probs)
    return BinaryPredictions((p >= t_cls).astype(np.int64), float(t_cls))


class ThresholdBinarizer(TransformerMixin, BaseEstimator):
    """Stateless transformer form of :func:`threshold_predictions`."""

    def __init__(self, threshold=0.5):
        self.threshold = threshold

    def fit(self, X, y=None):
        check_probability_matrix(X)
        return self

    def transform(self, X):
        return threshold_predictions(X, self.threshold).values


# ---------------------------------------------------------------------------
# confusion counts


@dataclass(frozen=True, eq=False)
class ConfusionCounts:
    tp: np.ndarray  # per attribute
    tn: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    sample_tp: np.ndarray  # per sample
    sample_fp: np.ndarray
    sample_fn: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.sample_tp.shape[0])

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("tp", "tn", "fp", "fn")}


def confusion_counts(preds, labels) -> ConfusionCounts:
    if isinstance(preds, BinaryPredictions):
        preds = preds.values
    yhat = check_binary_matrix(preds, "predictions")
    y = check_binary_matrix(labels, "labels")
    check_same_shape(yhat, y)
    tp = (yhat == 1) & (y == 1)
    fp = (yhat == 1) & (y == 0)
    fn = (yhat == 0) & (y == 1)
    tn = (yhat == 0) & (y == 0)
    return ConfusionCounts(
        tp.sum(axis=0), tn.sum(axis=0), fp.sum(axis=0), fn.sum(axis=0),
        tp.sum(axis=1), fp.sum(axis=1), fn.sum(axis=1),
    )


def _check_policy(policy: str) -> None:
    if policy not in ZERO_DIVISION_POLICIES:
        raise ValidationError(f"unknown zero-division policy {policy!r}; expected one of {ZERO_DIVISION_POLICIES}")


def _policy_mean(num: np.ndarray, den: np.ndarray, policy: str) -> float:
    num = num.astype(np.float64)
    den = den.astype(np.float64)
    ok = den > 0
    ratio = np.divide(num, den, out=np.zeros_like(num), where=ok)
    if policy == "one":
        ratio[~ok] = 1.0
    elif policy == "skip":
        ratio = ratio[ok]
    return float(np.mean(ratio)) if ratio.size else 0.0


# ---------------------------------------------------------------------------
# instance and label metrics


@dataclass(frozen=True, eq=False)
class InstanceScores:
    accuracy: float
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts


@dataclass(frozen=True, eq=False)
class LabelScores:
    ma: float
    mpr: float
    mnr: float
    positive_recall: np.ndarray  # nan where the attribute was skipped
    negative_recall: np.ndarray
    evaluated: np.ndarray  # bool mask over attributes
    counts: ConfusionCounts


def instance_metrics(preds, labels, zero_division: str = "eps-zero") -> InstanceScores:
    """Sample-averaged accuracy, precision and recall, and F1 from them.

    F1 is the harmonic mean of the averaged precision and recall, and 0 when
    both are 0.
    """
    _check_policy(zero_division)
    c = confusion_counts(preds, labels)
    tp, fp, fn = c.sample_tp, c.sample_fp, c.sample_fn
    acc = _policy_mean(tp, tp + fp + fn, zero_division)
    prec = _policy_mean(tp, tp + fp, zero_division)
    rec = _policy_mean(tp, tp + fn, zero_division)
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    return InstanceScores(acc, prec, rec, f1, c)


def label_metrics(preds, labels, attribute_names=None, skip_degenerate: bool = False) -> LabelScores:
    """Per-attribute positive/negative recall and their means.

    An attribute whose labels are all 0 or all 1 has an undefined recall on
    one side.  By default that raises :class:`DegenerateAttribute`; with
    ``skip_degenerate`` the attribute is left out of every mean.
    """
    c = confusion_counts(preds, labels)
    m = c.tp.shape[0]
    names = tuple(attribute_names) if attribute_names is not None else tuple(f"attr{j}" for j in range(m))
    pos = c.tp + c.fn
    neg = c.tn + c.fp
    degenerate = (pos == 0) | (neg == 0)
    bad = [names[j] for j in np.flatnonzero(degenerate)]
    if bad and not skip_degenerate:
        raise DegenerateAttribute(f"attributes without both positive and negative samples: {bad}", bad)
    evaluated = ~degenerate
    if not evaluated.any():
        raise DegenerateAttribute("no attribute has both positive and negative samples", bad)
    pr = np.full(m, np.nan)
    nr = np.full(m, np.nan)
    pr[evaluated] = c.tp[evaluated] / pos[evaluated]
    nr[evaluated] = c.tn[evaluated] / neg[evaluated]
    mpr = float(np.mean(pr[evaluated]))
    mnr = float(np.mean(nr[evaluated]))
    ma = float(np.mean(0.5 * (pr[evaluated] + nr[evaluated])))
    return LabelScores(ma, mpr, mnr, pr, nr, evaluated, c)


@dataclass(frozen=True, eq=False)
class MetricsReport:
    ma: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    mpr: float
    mnr: float
    positive_recall: tuple[Optional[float], ...]
    negative_recall: tuple[Optional[float], ...]
    attribute_names: tuple[str, ...]
    skipped_attributes: tuple[str, ...]
    zero_division: str
    threshold: Optional[float]
    subset: str
    n_samples: int
    counts: ConfusionCounts = field(repr=False)

    HEADLINE = ("ma", "accuracy", "precision", "recall", "f1")

    def to_dict(self) -> dict:
        return {
            "subset": self.subset,
            "n_samples": self.n_samples,
            "threshold": self.threshold,
            "zero_division": self.zero_division,
            "mA": self.ma,
            "Accu": self.accuracy,
            "Prec": self.precision,
            "Recall": self.recall,
            "F1": self.f1,
            "mPR": self.mpr,
            "mNR": self.mnr,
            "attributes": [
                {
                    "name": name,
                    "positive_recall": pr,
                    "negative_recall": nr,
                    "tp": int(self.counts.tp[j]),
                    "tn": int(self.counts.tn[j]),
                    "fp": int(self.counts.fp[j]),
                    "fn": int(self.counts.fn[j]),
                }
                for j, (name, pr, nr) in enumerate(zip(self.attribute_names, self.positive_recall, self.negative_recall))
            ],
            "skipped_attributes": list(self.skipped_attributes),
        }


def evaluate(
    preds,
    labels,
    threshold: float = 0.5,
    zero_division: str = "eps-zero",
    skip_degenerate: bool = False,
    attribute_names=None,
    subset: str = "all",
) -> MetricsReport:
    """Full metric suite.  ``preds`` may be probabilities or :class:`BinaryPredictions`."""
    if isinstance(preds, BinaryPredictions):
        binary = preds
    else:
        binary = threshold_predictions(preds, threshold)
    inst = instance_metrics(binary, labels, zero_division)
    lab = label_metrics(binary, labels, attribute_names, skip_degenerate)
    m = lab.evaluated.shape[0]
    names = tuple(attribute_names) if attribute_names is not None else tuple(f"attr{j}" for j in range(m))

    def _opt(v):
        return None if np.isnan(v) else float(v)

    return MetricsReport(
        lab.ma, inst.accuracy, inst.precision, inst.recall, inst.f1, lab.mpr, lab.mnr,
        tuple(_opt(v) for v in lab.positive_recall),
        tuple(_opt(v) for v in lab.negative_recall),
        names,
        tuple(names[j] for j in np.flatnonzero(~lab.evaluated)),
        zero_division,
        binary.threshold,
        subset,
        inst.counts.n_samples,
        inst.counts,
    )


def format_table(reports: dict) -> str:
    """Aligned console table in the order mA, Accu, Prec, Recall, F1."""
    cols = ("mA", "Accu", "Prec", "Recall", "F1", "mPR", "mNR", "N")
    width = max([len("subset")] + [len(k) for k in reports])
    lines = ["subset".ljust(width) + "".join(c.rjust(9) for c in cols)]
    for name, rep in reports.items():
        if rep is None:
            lines.append(name.ljust(width) + "   (empty)")
            continue
        vals = (rep.ma, rep.accuracy, rep.precision, rep.recall, rep.f1, rep.mpr, rep.mnr)
        lines.append(name.ljust(width) + "".join(f"{100 * v:9.2f}" for v in vals) + f"{rep.n_samples:9d}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# leakage


@dataclass(frozen=True)
class LeakageAudit:
    """Overlap between training and test identities.

    ``common_proportion_bounds`` brackets the true common-image proportion
    when some test images have no identity: the lower bound counts them as
    unique, the upper bound as common.
    """

    common_identities: tuple[str, ...]
    n_train_identities: int
    n_test_identities: int
    n_test_images: int
    n_common_images: int
    n_unique_images: int
    n_unidentified_images: int
    n_train_images: int
    n_train_common_images: int

    @property
    def common_proportion(self) -> float:
        return self.n_common_images / self.n_test_images if self.n_test_images else 0.0

    @property
    def unique_proportion(self) -> float:
        return self.n_unique_images / self.n_test_images if self.n_test_images else 0.0

    @property
    def unidentified_proportion(self) -> float:
        return self.n_unidentified_images / self.n_test_images if self.n_test_images else 0.0

    @property
    def common_proportion_bounds(self) -> tuple[float, float]:
        if not self.n_test_images:
            return (0.0, 0.0)
        return (
            self.n_common_images / self.n_test_images,
            (self.n_common_images + self.n_unidentified_images) / self.n_test_images,
        )

    def to_dict(self) -> dict:
        lo, hi = self.common_proportion_bounds
        return {
            "n_common_identities": len(self.common_identities),
            "common_identities": list(self.common_identities),
            "n_train_identities": self.n_train_identities,
            "n_test_identities": self.n_test_identities,
            "n_test_images": self.n_test_images,
            "n_common_images": self.n_common_images,
            "n_unique_images": self.n_unique_images,
            "n_unidentified_images": self.n_unidentified_images,
            "common_proportion": self.common_proportion,
            "unique_proportion": self.unique_proportion,
            "unidentified_proportion": self.unidentified_proportion,
            "common_proportion_bounds": [lo, hi],
            "n_train_images": self.n_train_images,
            "n_train_common_images": self.n_train_common_images,
        }

    def summary(self) -> str:
        lo, hi = self.common_proportion_bounds
        text = (
            f"common identities: {len(self.common_identities)} "
            f"({len(self.common_identities)}/{self.n_test_identities} of test identities)\n"
            f"common-identity test images: {self.n_common_images}/{self.n_test_images} = {100 * lo:.2f}%\n"
            f"unique-identity test images: {self.n_unique_images}/{self.n_test_images} = {100 * self.unique_proportion:.2f}%\n"
            f"unidentified test images: {self.n_unidentified_images}"
        )
        if self.n_unidentified_images:
            text += f"\ncommon-identity proportion lies in [{100 * lo:.2f}%, {100 * hi:.2f}%]"
        return text


def _strata(dataset: Dataset, split: SplitSpec) -> dict[str, list[int]]:
    train_ids = {dataset.identity_ids[p] for p in split.train} - {None}
    out = {"common": [], "unique": [], "unidentified": []}
    for p in split.test:
        ident = dataset.identity_ids[p]
        if ident is None:
            out["unidentified"].append(p)
        elif ident in train_ids:
            out["common"].append(p)
        else:
            out["unique"].append(p)
    return out


def audit_leakage(dataset: Dataset, split: SplitSpec) -> LeakageAudit:
    strata = _strata(dataset, split)
    train_ids = {dataset.identity_ids[p] for p in split.train} - {None}
    test_ids = {dataset.identity_ids[p] for p in split.test} - {None}
    common = train_ids & test_ids
    ordered = dict.fromkeys(i for i in dataset.identity_ids if i in common)
    return LeakageAudit(
        tuple(ordered),
        len(train_ids),
        len(test_ids),
        len(split.test),
        len(strata["common"]),
        len(strata["unique"]),
        len(strata["unidentified"]),
        len(split.train),
        sum(1 for p in split.train if dataset.identity_ids[p] in common),
    )


@dataclass(frozen=True, eq=False)
class StratifiedReport:
    """Metrics per test stratum; ``None`` marks an empty stratum."""

    common: Optional[MetricsReport]
    unique: Optional[MetricsReport]
    unidentified: Optional[MetricsReport]
    all: MetricsReport
    counts: dict  # stratum -> ConfusionCounts or None

    def __getitem__(self, stratum: str) -> Optional[MetricsReport]:
        return getattr(self, stratum)

    def to_dict(self) -> dict:
        return {s: ({"empty": True} if self[s] is None else self[s].to_dict()) for s in STRATA}

    def table(self) -> str:
        return format_table({s: self[s] for s in STRATA})


def stratified_eval(
    predictions,
    dataset: Dataset,
    split: SplitSpec,
    threshold: float = 0.5,
    zero_division: str = "eps-zero",
    skip_degenerate: bool = False,
) -> StratifiedReport:
    """Evaluate test predictions separately on common, unique and unidentified images.

    ``predictions`` is a :class:`PredictionSet` covering the test part or an
    array whose rows follow ``split.test``.
    """
    test = list(split.test)
    if isinstance(predictions, PredictionSet):
        probs = predictions.rows(test)
    else:
        probs = check_probability_matrix(predictions)
        if probs.shape[0] != len(test):
            raise ValidationError(f"expected {len(test)} prediction rows for the test part, got {probs.shape[0]}")
    row_of = {p: i for i, p in enumerate(test)}
    strata = _strata(dataset, split)
    strata["all"] = test
    names = dataset.attribute_names
    reports, counts = {}, {}
    for name in STRATA:
        pos = strata[name]
        if not pos:
            reports[name], counts[name] = None, None
            continue
        rows = probs[[row_of[p] for p in pos]]
        labels = dataset.labels[np.asarray(pos, dtype=np.int64)]
        binary = threshold_predictions(rows, threshold)
        counts[name] = confusion_counts(binary, labels)
        reports[name] = evaluate(binary, labels, threshold, zero_division, skip_degenerate, names, name)
    return StratifiedReport(reports["common"], reports["unique"], reports["unidentified"], reports["all"], counts)
