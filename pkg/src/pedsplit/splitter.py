"""Identity-disjoint train/valid/test partitioning by randomized search.

Each trial draws an identity count for the training part from a window
around three fifths of all identities, a validation count from a window
around half of the remainder, shuffles identities into the three parts and
accepts the partition when the validation and test image counts are close
and every attribute's positive ratio in validation and test stays close to
the training ratio.

Trials are seeded independently from ``(seed, trial_index)`` and the
accepted split is the successful trial with the smallest index, so the
result does not depend on how many worker threads evaluate trials.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from sklearn.base import BaseEstimator

from .core import AttributeSchema, Dataset, build_identity_index
from .exceptions import InsufficientIdentities, OverlappingSplit, SearchExhausted, ValidationError

logger = logging.getLogger(__name__)

PARTS = ("train", "valid", "test")
_BATCH = 64


@dataclass(frozen=True)
class Thresholds:
    t_id: int = 50
    t_img: int = 300
    t_attr: float = 0.03
    max_trials: int = 100_000

    def __post_init__(self):
        if int(self.t_id) != self.t_id or self.t_id <= 0:
            raise ValidationError("t_id must be a positive integer")
        if int(self.t_img) != self.t_img or self.t_img <= 0:
            raise ValidationError("t_img must be a positive integer")
        if not 0.0 < self.t_attr <= 1.0:
            raise ValidationError("t_attr must lie in (0, 1]")
        if int(self.max_trials) != self.max_trials or self.max_trials <= 0:
            raise ValidationError("max_trials must be a positive integer")
        object.__setattr__(self, "t_id", int(self.t_id))
        object.__setattr__(self, "t_img", int(self.t_img))
        object.__setattr__(self, "t_attr", float(self.t_attr))
        object.__setattr__(self, "max_trials", int(self.max_trials))

    def to_dict(self) -> dict:
        return {"t_id": self.t_id, "t_img": self.t_img, "t_attr": self.t_attr, "max_trials": self.max_trials}


@dataclass(frozen=True)
class SplitSpec:
    """Three disjoint lists of sample positions plus search provenance.

    Positions are stored sorted.  Identity tuples list the identities
    present in each part in order of first appearance in the dataset; they
    may overlap for splits that are not identity-aware.
    """

    train: tuple[int, ...]
    valid: tuple[int, ...]
    test: tuple[int, ...]
    train_identities: tuple[str, ...] = ()
    valid_identities: tuple[str, ...] = ()
    test_identities: tuple[str, ...] = ()
    seed: Optional[int] = None
    thresholds: Optional[Thresholds] = None
    trial_index: Optional[int] = None

    @classmethod
    def from_positions(cls, dataset: Dataset, train, valid, test, **provenance) -> "SplitSpec":
        parts = [tuple(sorted(int(p) for p in part)) for part in (train, valid, test)]
        n = dataset.n_samples
        for part in parts:
            if part and (part[0] < 0 or part[-1] >= n):
                raise ValidationError("split references positions outside the dataset")
            if len(set(part)) != len(part):
                raise OverlappingSplit("a split part lists the same sample twice")
        overlap = set()
        for a in range(3):
            for b in range(a + 1, 3):
                overlap |= set(parts[a]) & set(parts[b])
        if overlap:
            ids = sorted(dataset.image_ids[p] for p in overlap)
            raise OverlappingSplit(f"image ids assigned to more than one part: {ids[:20]}", ids)
        order = build_identity_index(dataset).identities
        idents = []
        for part in parts:
            present = {dataset.identity_ids[p] for p in part} - {None}
            idents.append(tuple(k for k in order if k in present))
        return cls(*parts, *idents, **provenance)

    def part(self, name: str) -> tuple[int, ...]:
        return getattr(self, name)

    def identities(self, name: str) -> tuple[str, ...]:
        return getattr(self, f"{name}_identities")


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    informational: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "criterion": self.number,
            "name": self.name,
            "passed": self.passed,
            "measured": self.measured,
            "informational": self.informational,
        }


@dataclass(frozen=True)
class CriteriaReport:
    criteria: tuple[CriterionResult, ...]
    thresholds: Thresholds
    notes: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def __getitem__(self, number: int) -> CriterionResult:
        for c in self.criteria:
            if c.number == number:
                return c
        raise KeyError(number)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "thresholds": self.thresholds.to_dict(),
            "criteria": [c.to_dict() for c in self.criteria],
            "notes": list(self.notes),
        }

    def table(self) -> str:
        rows = [("#", "criterion", "result", "measured")]
        for c in self.criteria:
            shown = ", ".join(f"{k}={_fmt(v)}" for k, v in c.measured.items() if not isinstance(v, list))
            rows.append((str(c.number), c.name, "PASS" if c.passed else "FAIL", shown))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(r[i].ljust(widths[i]) for i in range(3)) + "  " + r[3] for r in rows]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def train_identity_target(n_identities: int) -> int:
    """Centre of the training identity window, ceil(3K/5)."""
    return -(-3 * n_identities // 5)


def _windows(n_identities: int, t_id: int):
    target = train_identity_target(n_identities)
    return max(1, target - t_id), min(n_identities - 2, target + t_id)


def _valid_window(rest: int, t_id: int):
    # integers within t_id of rest / 2, leaving at least one identity for test
    lo = -(-(rest - 2 * t_id) // 2)
    hi = (rest + 2 * t_id) // 2
    return max(1, lo), min(rest - 1, hi)


# ---------------------------------------------------------------------------
# verification


def verify_split(dataset: Dataset, split: SplitSpec, thresholds: Thresholds | None = None) -> CriteriaReport:
    """Check all five construction criteria on ``split``.

    Nothing about how the split was produced is trusted: identity sets,
    counts and ratios are recomputed from sample positions.
    """
    th = thresholds or split.thresholds or Thresholds()
    index = build_identity_index(dataset)
    all_ids = set(index.groups)
    k_all = len(all_ids)
    parts = {name: np.asarray(split.part(name), dtype=np.int64) for name in PARTS}
    ids = {
        name: {dataset.identity_ids[p] for p in parts[name]} - {None} for name in PARTS
    }
    k = {name: len(ids[name]) for name in PARTS}
    n = {name: int(parts[name].size) for name in PARTS}
    notes = []

    # 1: coverage and the 3:1:1 training window
    covered = ids["train"] | ids["valid"] | ids["test"]
    assigned = set()
    for name in PARTS:
        assigned.update(parts[name].tolist())
    identified = {p for k_, ps in index.groups.items() for p in ps}
    unassigned = len(identified - assigned)
    target = train_identity_target(k_all)
    train_slack = abs(k["train"] - target)
    c1_pass = covered == all_ids and unassigned == 0 and train_slack <= th.t_id
    c1 = CriterionResult(
        1,
        "identity ratio ~ 3:1:1",
        c1_pass,
        {
            "identities_all": k_all,
            "identities_train": k["train"],
            "identities_valid": k["valid"],
            "identities_test": k["test"],
            "train_target": target,
            "train_slack": train_slack,
            "uncovered_identities": len(all_ids - covered),
            "unassigned_samples": unassigned,
        },
        {"ratio": [round(k[name] / k_all * 5, 6) if k_all else None for name in PARTS]},
    )

    # 2: pairwise identity disjointness
    shared = {}
    for a, b in (("train", "valid"), ("train", "test"), ("valid", "test")):
        common = ids[a] & ids[b]
        if common:
            shared[f"{a}&{b}"] = sorted(common)
    c2 = CriterionResult(
        2,
        "identity sets disjoint",
        not shared,
        {"shared_identities": sum(len(v) for v in shared.values())},
        {"shared": shared},
    )

    # 3: validation identity count within t_id of half the non-training identities
    k_mid = (k_all - k["train"]) / 2
    valid_slack = abs(k["valid"] - k_mid)
    prose_diff = abs(k["valid"] - k["test"])
    c3 = CriterionResult(
        3,
        "valid identity count",
        valid_slack <= th.t_id,
        {"valid_target": k_mid, "valid_slack": valid_slack},
        {
            "valid_test_identity_difference": prose_diff,
            "difference_over_all_identities": prose_diff / k_all if k_all else None,
        },
    )

    # 4: validation / test image counts
    img_diff = abs(n["test"] - n["valid"])
    c4 = CriterionResult(
        4,
        "valid/test image count",
        img_diff <= th.t_img,
        {"images_train": n["train"], "images_valid": n["valid"], "images_test": n["test"], "image_difference": img_diff},
    )

    # 5: attribute positive ratios against the training part
    names = dataset.attribute_names
    if any(n[name] == 0 for name in PARTS):
        c5 = CriterionResult(5, "attribute ratio", False, {"empty_parts": [p for p in PARTS if n[p] == 0]})
    else:
        r = {name: dataset.labels[parts[name]].sum(axis=0, dtype=np.int64) / n[name] for name in PARTS}
        d_tv = np.abs(r["train"] - r["valid"])
        d_tt = np.abs(r["train"] - r["test"])
        d_vt = np.abs(r["valid"] - r["test"])
        c5_pass = bool(d_tv.max() <= th.t_attr and d_tt.max() <= th.t_attr)
        signed = bool(((r["train"] - r["valid"]) <= th.t_attr).all() and ((r["train"] - r["test"]) <= th.t_attr).all())
        if signed != c5_pass:
            notes.append("signed ratio check disagrees with the absolute check on criterion 5")
        c5 = CriterionResult(
            5,
            "attribute ratio",
            c5_pass,
            {
                "max_train_valid": float(d_tv.max()),
                "argmax_train_valid": names[int(d_tv.argmax())],
                "max_train_test": float(d_tt.max()),
                "argmax_train_test": names[int(d_tt.argmax())],
            },
            {
                "max_valid_test": float(d_vt.max()),
                "argmax_valid_test": names[int(d_vt.argmax())],
                "signed_check_passed": signed,
            },
        )
    if index.unidentified:
        notes.append(f"{len(index.unidentified)} samples carry no identity")
    return CriteriaReport((c1, c2, c3, c4, c5), th, tuple(notes))


# ---------------------------------------------------------------------------
# search


class _Problem:
    """Identity-level aggregates so that a trial costs O(K * M)."""

    def __init__(self, dataset: Dataset):
        index = build_identity_index(dataset)
        if index.unidentified:
            raise ValidationError(
                f"{len(index.unidentified)} samples have no identity; prune them before splitting"
            )
        if len(index) < 5:
            raise InsufficientIdentities(f"need at least 5 identities, found {len(index)}")
        self.index = index
        self.keys = index.identities
        self.K = len(self.keys)
        self.N = dataset.n_samples
        owner = np.empty(self.N, dtype=np.int64)
        for j, key in enumerate(self.keys):
            owner[list(index.groups[key])] = j
        self.counts = np.bincount(owner, minlength=self.K)
        sums = np.zeros((self.K, dataset.n_attributes), dtype=np.int64)
        np.add.at(sums, owner, dataset.labels.astype(np.int64))
        self.sums = sums
        self.total = sums.sum(axis=0)


def _trial(problem: _Problem, th: Thresholds, seed: int, t: int):
    """Run one trial; return (passed, score, perm, k_train, k_valid)."""
    rng = np.random.default_rng([seed, t])
    K = problem.K
    lo, hi = _windows(K, th.t_id)
    k_train = int(rng.integers(lo, hi, endpoint=True))
    lo_v, hi_v = _valid_window(K - k_train, th.t_id)
    k_valid = int(rng.integers(lo_v, hi_v, endpoint=True))
    perm = rng.permutation(K)
    va = perm[k_train : k_train + k_valid]
    te = perm[k_train + k_valid :]
    n_va = int(problem.counts[va].sum())
    n_te = int(problem.counts[te].sum())
    n_tr = problem.N - n_va - n_te
    img = abs(n_te - n_va) / th.t_img
    s_va = problem.sums[va].sum(axis=0)
    s_te = problem.sums[te].sum(axis=0)
    r_tr = (problem.total - s_va - s_te) / n_tr
    d_tv = float(np.abs(r_tr - s_va / n_va).max()) / th.t_attr
    d_tt = float(np.abs(r_tr - s_te / n_te).max()) / th.t_attr
    slack = (img, d_tv, d_tt)
    passed = all(s <= 1.0 for s in slack)
    score = (sum(max(0.0, s - 1.0) for s in slack), sum(slack))
    return passed, score, perm, k_train, k_valid


def _run_batch(problem, th, seed, start, stop):
    best = None
    for t in range(start, stop):
        passed, score, perm, k_train, k_valid = _trial(problem, th, seed, t)
        if passed:
            return (t, perm, k_train, k_valid), best
        if best is None or score < best[0]:
            best = (score, t, perm, k_train, k_valid)
    return None, best


def _to_split(problem: _Problem, dataset: Dataset, seed, th, t, perm, k_train, k_valid) -> SplitSpec:
    keys = problem.keys
    groups = (perm[:k_train], perm[k_train : k_train + k_valid], perm[k_train + k_valid :])
    positions = [problem.index.positions(keys[j] for j in g) for g in groups]
    order = {k: i for i, k in enumerate(keys)}
    idents = [tuple(sorted((keys[j] for j in g), key=order.__getitem__)) for g in groups]
    return SplitSpec(
        *(tuple(int(p) for p in pos) for pos in positions),
        *idents,
        seed=seed,
        thresholds=th,
        trial_index=t,
    )


def search_split(dataset: Dataset, thresholds: Thresholds | None = None, seed: int = 0, threads: int = 1) -> SplitSpec:
    """Search for a split satisfying every criterion.

    Raises
    ------
    SearchExhausted
        After ``thresholds.max_trials`` failures; carries the trial with the
        smallest total normalized slack.
    InsufficientIdentities
        Fewer than five identities.
    """
    th = thresholds or Thresholds()
    problem = _Problem(dataset)
    seed = int(seed)
    best = None
    found = None
    if threads <= 1:
        found, best = _run_batch(problem, th, seed, 0, th.max_trials)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            start = 0
            while start < th.max_trials and found is None:
                bounds = []
                for _ in range(threads):
                    stop = min(start + _BATCH, th.max_trials)
                    if start >= stop:
                        break
                    bounds.append((start, stop))
                    start = stop
                results = list(pool.map(lambda b: _run_batch(problem, th, seed, *b), bounds))
                for hit, batch_best in results:
                    if hit is not None and (found is None or hit[0] < found[0]):
                        found = hit
                    if batch_best is not None and (best is None or batch_best[:2] < best[:2]):
                        best = batch_best
    if found is not None:
        t, perm, k_train, k_valid = found
        logger.info("split found at trial %d (seed %d)", t, seed)
        return _to_split(problem, dataset, seed, th, t, perm, k_train, k_valid)
    _, t, perm, k_train, k_valid = best
    best_split = _to_split(problem, dataset, seed, th, t, perm, k_train, k_valid)
    raise SearchExhausted(th.max_trials, best_split, verify_split(dataset, best_split, th))


def derive_seed(base_seed: int, version: int) -> int:
    state = np.random.SeedSequence([int(base_seed), int(version)]).generate_state(1, np.uint64)
    return int(state[0])


def search_versions(
    dataset: Dataset,
    thresholds: Thresholds | None = None,
    base_seed: int = 0,
    n_versions: int = 5,
    threads: int = 1,
) -> list[SplitSpec]:
    """Run the search ``n_versions`` times with seeds derived from ``base_seed``."""
    if n_versions < 1:
        raise ValidationError("n_versions must be at least 1")
    return [
        search_split(dataset, thresholds, derive_seed(base_seed, v), threads=threads)
        for v in range(n_versions)
    ]


class ZeroShotSplitter(BaseEstimator):
    """Identity-disjoint splitter with a scikit-learn style interface.

    ``split(X, y, groups)`` yields one ``(train, valid, test)`` triple of
    index arrays per version, where ``y`` is the binary label matrix and
    ``groups`` the identity of each row.

    Examples
    --------
    >>> splitter = ZeroShotSplitter(n_versions=1, random_state=3)  # doctest: +SKIP
    >>> train, valid, test = next(splitter.split(X, Y, groups=person_ids))  # doctest: +SKIP
    """

    def __init__(self, n_versions=1, t_id=50, t_img=300, t_attr=0.03, max_trials=100_000, random_state=0, n_jobs=1):
        self.n_versions = n_versions
        self.t_id = t_id
        self.t_img = t_img
        self.t_attr = t_attr
        self.max_trials = max_trials
        self.random_state = random_state
        self.n_jobs = n_jobs

    def get_n_splits(self, X=None, y=None, groups=None) -> int:
        return self.n_versions

    def split(self, X, y, groups):
        if y is None or groups is None:
            raise ValueError("ZeroShotSplitter needs both the label matrix y and identity groups")
        y = np.asarray(y)
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        groups = [str(g) for g in groups]
        if X is not None and len(X) != len(groups):
            raise ValueError("X and groups differ in length")
        dataset = Dataset(
            AttributeSchema(tuple(f"attr{j}" for j in range(y.shape[1]))),
            tuple(str(i) for i in range(len(groups))),
            tuple(groups),
            y,
        )
        th = Thresholds(self.t_id, self.t_img, self.t_attr, self.max_trials)
        for spec in search_versions(dataset, th, self.random_state, self.n_versions, self.n_jobs):
            yield tuple(np.asarray(spec.part(p), dtype=np.int64) for p in PARTS)

