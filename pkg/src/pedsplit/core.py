"""Domain model for attribute-annotated pedestrian datasets.

A :class:`Dataset` stores its labels as an ``(N, M)`` uint8 matrix with one
column per attribute of its :class:`AttributeSchema`.  Identities are opaque
strings; a sample may carry no identity at all.  All objects are immutable
once built (label arrays are flagged read-only).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .exceptions import AllAttributesPruned, EmptySubset, ValidationError

__all__ = [
    "AttributeSchema",
    "Sample",
    "Dataset",
    "IdentityIndex",
    "PruneReport",
    "build_identity_index",
    "positive_ratio",
    "prune",
]


@dataclass(frozen=True)
class AttributeSchema:
    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise ValidationError("attribute schema must contain at least one name")
        if any(not isinstance(n, str) or not n for n in names):
            raise ValidationError("attribute names must be non-empty strings")
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise ValidationError(f"duplicate attribute names: {dup}")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)


@dataclass(frozen=True)
class Sample:
    image_id: str
    identity_id: Optional[str]
    labels: tuple[int, ...]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered collection of labelled samples.

    Parameters
    ----------
    schema : AttributeSchema
        Canonical attribute order.
    image_ids : sequence of str
        Unique per dataset.
    identity_ids : sequence of str or None
        ``None`` marks a sample without a pedestrian identity.
    labels : array-like of shape (n_samples, n_attributes)
        Binary label matrix.
    """

    schema: AttributeSchema
    image_ids: tuple[str, ...]
    identity_ids: tuple[Optional[str], ...]
    labels: np.ndarray = field(repr=False)

    def __post_init__(self):
        image_ids = tuple(self.image_ids)
        identity_ids = tuple(self.identity_ids)
        labels = np.asarray(self.labels)
        n = len(image_ids)
        if n < 1:
            raise ValidationError("a dataset needs at least one sample")
        if len(identity_ids) != n:
            raise ValidationError("identity_ids and image_ids differ in length")
        if labels.ndim != 2 or labels.shape[0] != n:
            raise ValidationError(f"labels must have shape ({n}, M), got {labels.shape}")
        if labels.shape[1] != len(self.schema):
            raise ValidationError(
                f"labels have {labels.shape[1]} columns but the schema has {len(self.schema)} attributes"
            )
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ValidationError("labels must be 0 or 1")
        if len(set(image_ids)) != n:
            seen, dup = set(), []
            for i in image_ids:
                if i in seen:
                    dup.append(i)
                seen.add(i)
            raise ValidationError(f"duplicate image ids: {dup[:10]}")
        for iid in identity_ids:
            if iid is not None and not isinstance(iid, str):
                raise ValidationError("identity ids must be strings or None")
        object.__setattr__(self, "image_ids", image_ids)
        object.__setattr__(self, "identity_ids", identity_ids)
        object.__setattr__(self, "labels", _readonly(np.array(labels, dtype=np.uint8)))

    @classmethod
    def from_samples(cls, attribute_names: Iterable[str], samples: Iterable[Sample]) -> "Dataset":
        samples = list(samples)
        schema = AttributeSchema(tuple(attribute_names))
        m = len(schema)
        for s in samples:
            if len(s.labels) != m:
                raise ValidationError(
                    f"sample {s.image_id!r} has {len(s.labels)} labels, expected {m}"
                )
        labels = np.array([s.labels for s in samples], dtype=np.int64).reshape(len(samples), m)
        return cls(
            schema,
            tuple(s.image_id for s in samples),
            tuple(s.identity_id for s in samples),
            labels,
        )

    @property
    def n_samples(self) -> int:
        return len(self.image_ids)

    @property
    def n_attributes(self) -> int:
        return len(self.schema)

    @property
    def attribute_names(self) -> tuple[str, ...]:
        return self.schema.names

    def __len__(self) -> int:
        return self.n_samples

    def __getitem__(self, position: int) -> Sample:
        return Sample(
            self.image_ids[position],
            self.identity_ids[position],
            tuple(int(v) for v in self.labels[position]),
        )

    @property
    def samples(self) -> list[Sample]:
        return [self[i] for i in range(self.n_samples)]

    def position_of(self) -> dict[str, int]:
        """Map image id to sample position."""
        return {iid: i for i, iid in enumerate(self.image_ids)}

    def subset(self, positions: Sequence[int]) -> "Dataset":
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(
            self.schema,
            tuple(self.image_ids[p] for p in positions),
            tuple(self.identity_ids[p] for p in positions),
            self.labels[positions],
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.image_ids == other.image_ids
            and self.identity_ids == other.identity_ids
            and np.array_equal(self.labels, other.labels)
        )

    __hash__ = None


@dataclass(frozen=True)
class IdentityIndex:
    """Sample positions grouped by identity, in order of first appearance."""

    groups: dict[str, tuple[int, ...]]
    unidentified: tuple[int, ...]

    @property
    def identities(self) -> tuple[str, ...]:
        return tuple(self.groups)

    def __len__(self) -> int:
        return len(self.groups)

    def positions(self, identities: Iterable[str]) -> np.ndarray:
        out = [p for k in identities for p in self.groups[k]]
        return np.array(sorted(out), dtype=np.int64)


def build_identity_index(dataset: Dataset) -> IdentityIndex:
    groups: dict[str, list[int]] = {}
    unidentified = []
    for pos, ident in enumerate(dataset.identity_ids):
        if ident is None:
            unidentified.append(pos)
        else:
            groups.setdefault(ident, []).append(pos)
    return IdentityIndex({k: tuple(v) for k, v in groups.items()}, tuple(unidentified))


def positive_ratio(dataset: Dataset, subset: Sequence[int] | None = None) -> np.ndarray:
    """Per-attribute fraction of positive labels over ``subset``.

    ``subset`` defaults to every sample.  Raises :class:`EmptySubset` when
    the subset is empty.
    """
    if subset is None:
        rows = dataset.labels
    else:
        idx = np.asarray(subset, dtype=np.int64)
        if idx.size == 0:
            raise EmptySubset("positive ratio of an empty subset is undefined")
        if idx.min() < 0 or idx.max() >= dataset.n_samples:
            raise ValidationError("subset contains out-of-range positions")
        rows = dataset.labels[idx]
    return rows.sum(axis=0, dtype=np.int64) / rows.shape[0]


@dataclass(frozen=True)
class PruneReport:
    dropped_attributes: tuple[str, ...]
    dropped_samples: int


def prune(dataset: Dataset, drop_unidentified: bool = False, min_positive: int = 1):
    """Drop unidentified samples and rarely-positive attributes.

    Sample removal happens first, so ``min_positive`` counts positives among
    the surviving samples.

    Returns
    -------
    (Dataset, PruneReport)
    """
    keep = np.arange(dataset.n_samples)
    if drop_unidentified:
        keep = np.array([i for i, k in enumerate(dataset.identity_ids) if k is not None], dtype=np.int64)
        if keep.size == 0:
            raise ValidationError("no identified samples remain after pruning")
    labels = dataset.labels[keep]
    counts = labels.sum(axis=0, dtype=np.int64)
    cols = np.flatnonzero(counts >= min_positive)
    if cols.size == 0:
        raise AllAttributesPruned(f"every attribute has fewer than {min_positive} positive samples")
    names = dataset.schema.names
    dropped = tuple(names[j] for j in range(len(names)) if counts[j] < min_positive)
    pruned = Dataset(
        AttributeSchema(tuple(names[j] for j in cols)),
        tuple(dataset.image_ids[i] for i in keep),
        tuple(dataset.identity_ids[i] for i in keep),
        labels[:, cols],
    )
    return pruned, PruneReport(dropped, dataset.n_samples - int(keep.size))
