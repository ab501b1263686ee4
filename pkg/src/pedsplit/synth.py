"""Synthetic identity-structured data and a nearest-neighbour memorizer.

Each identity gets a random feature centre and a prototype label vector;
its images are the centre plus isotropic noise, with every label flipped
independently with probability ``flip_prob``.  A 1-nearest-neighbour
classifier then recognizes test images of identities it saw in training
almost perfectly and is at chance on unseen identities, which is the gap an
identity-leaking split hides.
"""

from __future__ import annotations

import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import AttributeSchema, Dataset
from .exceptions import ValidationError
from .metrics import PredictionSet, StratifiedReport, stratified_eval
from .splitter import SplitSpec, Thresholds, search_split

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_CHUNK = 256


@dataclass(frozen=True)
class SynthConfig:
    n_identities: int = 2000
    images_per_identity: tuple[int, int] = (2, 10)
    n_attributes: int = 20
    attribute_priors: Optional[tuple[float, ...]] = None
    flip_prob: float = 0.05
    n_features: int = 32
    center_scale: float = 1.0
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        lo, hi = (int(v) for v in self.images_per_identity)
        object.__setattr__(self, "images_per_identity", (lo, hi))
        if self.n_identities < 1:
            raise ValidationError("n_identities must be >= 1")
        if not 1 <= lo <= hi:
            raise ValidationError("images_per_identity must satisfy 1 <= low <= high")
        if self.n_attributes < 1 or self.n_features < 1:
            raise ValidationError("n_attributes and n_features must be >= 1")
        if not 0.0 <= self.flip_prob < 0.5:
            raise ValidationError("flip_prob must lie in [0, 0.5)")
        if self.center_scale <= 0 or self.noise < 0:
            raise ValidationError("center_scale must be > 0 and noise >= 0")
        if self.attribute_priors is not None:
            priors = tuple(float(p) for p in self.attribute_priors)
            if len(priors) != self.n_attributes:
                raise ValidationError("attribute_priors needs one value per attribute")
            if any(not 0.0 < p < 1.0 for p in priors):
                raise ValidationError("attribute priors must lie in (0, 1)")
            object.__setattr__(self, "attribute_priors", priors)

    @property
    def priors(self) -> np.ndarray:
        if self.attribute_priors is not None:
            return np.array(self.attribute_priors)
        return np.linspace(0.05, 0.5, self.n_attributes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["images_per_identity"] = list(self.images_per_identity)
        if d["attribute_priors"] is not None:
            d["attribute_priors"] = list(d["attribute_priors"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown synth config keys: {sorted(unknown)}")
        d = dict(d)
        if "images_per_identity" in d:
            d["images_per_identity"] = tuple(d["images_per_identity"])
        if d.get("attribute_priors") is not None:
            d["attribute_priors"] = tuple(d["attribute_priors"])
        return cls(**d)


@dataclass(frozen=True)
class DemoConfig:
    split_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    # identity-clustered labels make the stock 0.03 ratio slack slow to hit
    thresholds: Thresholds = field(default_factory=lambda: Thresholds(t_attr=0.04))


def default_config_text() -> str:
    return resources.files("pedsplit").joinpath("data/synth_default.toml").read_text(encoding="utf-8")


def load_config(path=None) -> tuple[SynthConfig, DemoConfig]:
    """Read a TOML config with ``[synth]`` and ``[demo]`` tables; defaults when ``path`` is None."""
    if path is None:
        doc = tomllib.loads(default_config_text())
    else:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    synth = SynthConfig.from_dict(doc.get("synth", {}))
    demo = dict(doc.get("demo", {}))
    th = Thresholds(**demo.pop("thresholds", {}))
    fr = tuple(float(v) for v in demo.pop("fractions", (0.6, 0.2, 0.2)))
    seeds = tuple(int(v) for v in demo.pop("split_seeds", (0, 1, 2, 3, 4)))
    if demo:
        raise ValidationError(f"unknown demo config keys: {sorted(demo)}")
    return synth, DemoConfig(seeds, fr, th)


@dataclass(frozen=True, eq=False)
class SynthDataset:
    dataset: Dataset
    features: np.ndarray
    identity_of: np.ndarray  # integer identity per sample
    config: SynthConfig


def _names(prefix: str, n: int) -> list[str]:
    width = max(1, len(str(n - 1)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def generate(config: SynthConfig) -> SynthDataset:
    """Draw a synthetic dataset; samples are grouped by identity."""
    k, m, d = config.n_identities, config.n_attributes, config.n_features
    ident_rng = np.random.default_rng([config.seed, 0])
    inst_rng = np.random.default_rng([config.seed, 1])
    lo, hi = config.images_per_identity
    counts = ident_rng.integers(lo, hi, size=k, endpoint=True)
    centers = ident_rng.normal(0.0, config.center_scale, size=(k, d))
    prototypes = (ident_rng.random((k, m)) < config.priors).astype(np.uint8)
    owner = np.repeat(np.arange(k), counts)
    n = owner.size
    features = centers[owner] + inst_rng.normal(0.0, 1.0, size=(n, d)) * config.noise
    flips = (inst_rng.random((n, m)) < config.flip_prob).astype(np.uint8)
    labels = prototypes[owner] ^ flips
    idents = _names("id", k)
    dataset = Dataset(
        AttributeSchema(tuple(_names("attr", m))),
        tuple(_names("img", n)),
        tuple(idents[j] for j in owner),
        labels,
    )
    features.setflags(write=False)
    return SynthDataset(dataset, features, owner, config)


def make_shaped_dataset(
    n_identities: int,
    n_images: int,
    n_attributes: int = 35,
    seed: int = 0,
    flip_prob: float = 0.05,
    priors: Sequence[float] | None = None,
) -> Dataset:
    """Dataset with exactly ``n_identities`` identities over ``n_images`` images.

    Every identity has at least one image; the rest are spread with
    gamma-distributed popularity so a few identities have many images.
    """
    if n_images < n_identities:
        raise ValidationError("need at least one image per identity")
    rng = np.random.default_rng([seed, 2])
    weights = rng.gamma(0.5, size=n_identities)
    counts = 1 + rng.multinomial(n_images - n_identities, weights / weights.sum())
    pri = np.asarray(priors if priors is not None else np.linspace(0.05, 0.5, n_attributes))
    prototypes = (rng.random((n_identities, n_attributes)) < pri).astype(np.uint8)
    owner = np.repeat(np.arange(n_identities), counts)
    flips = (rng.random((n_images, n_attributes)) < flip_prob).astype(np.uint8)
    idents = _names("id", n_identities)
    return Dataset(
        AttributeSchema(tuple(_names("attr", n_attributes))),
        tuple(_names("img", n_images)),
        tuple(idents[j] for j in owner),
        prototypes[owner] ^ flips,
    )


def placeholder_split(identity_counts: Sequence[int], image_counts: Sequence[int], n_attributes: int = 5):
    """Dataset plus split reproducing given per-part identity and image counts.

    Images are spread as evenly as possible over each part's identities and
    labels follow a fixed periodic pattern, so attribute ratios match
    across parts.  Returns ``(dataset, split)``.
    """
    image_ids, identity_ids, parts = [], [], [[], [], []]
    ident_no = 0
    for part, (k, n) in enumerate(zip(identity_counts, image_counts)):
        if n < k or k < 1:
            raise ValidationError("each part needs 1 <= identities <= images")
        base, extra = divmod(n, k)
        for j in range(k):
            for _ in range(base + (1 if j < extra else 0)):
                parts[part].append(len(image_ids))
                image_ids.append(f"img{len(image_ids):06d}")
                identity_ids.append(f"id{ident_no:05d}")
            ident_no += 1
    i = np.arange(len(image_ids))[:, None]
    j = np.arange(n_attributes)[None, :]
    labels = ((i * (2 * j + 3)) % (j + 4) == 0).astype(np.uint8)
    dataset = Dataset(AttributeSchema(tuple(_names("attr", n_attributes))), tuple(image_ids), tuple(identity_ids), labels)
    return dataset, SplitSpec.from_positions(dataset, *parts)


def random_split(dataset: Dataset, fractions: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0) -> SplitSpec:
    """Image-level shuffle into train/valid/test, ignoring identities."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or (fr < 0).any() or abs(fr.sum() - 1.0) > 1e-9:
        raise ValidationError("fractions must be three nonnegative numbers summing to 1")
    n = dataset.n_samples
    n_train = int(round(fr[0] * n))
    n_valid = min(int(round(fr[1] * n)), n - n_train)
    perm = np.random.default_rng([int(seed), 3]).permutation(n)
    return SplitSpec.from_positions(
        dataset, perm[:n_train], perm[n_train : n_train + n_valid], perm[n_train + n_valid :], seed=int(seed)
    )


# ---------------------------------------------------------------------------
# memorization oracle


class MemorizationClassifier(ClassifierMixin, BaseEstimator):
    """1-nearest-neighbour multi-label classifier.

    ``predict`` copies the label vector of the closest training row under
    squared Euclidean distance; ties go to the earliest training row.

    Parameters
    ----------
    n_jobs : int, default=1
        Threads used to scan blocks of query rows.  Results do not depend
        on it.
    """

    def __init__(self, n_jobs=1):
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
        self.X_ = X
        self.y_ = np.asarray(y)
        self.n_features_in_ = X.shape[1]
        return self

    def nearest(self, X) -> np.ndarray:
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        blocks = [X[i : i + _CHUNK] for i in range(0, X.shape[0], _CHUNK)]

        def scan(block):
            return cdist(block, self.X_, "sqeuclidean").argmin(axis=1)

        if self.n_jobs and self.n_jobs > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(max_workers=self.n_jobs) as pool:
                parts = list(pool.map(scan, blocks))
        else:
            parts = [scan(b) for b in blocks]
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)

    def predict(self, X):
        return self.y_[self.nearest(X)]


def memorization_oracle(
    synth: SynthDataset,
    split: SplitSpec,
    threads: int = 1,
    zero_division: str = "eps-zero",
    skip_degenerate: bool = True,
) -> StratifiedReport:
    """Fit the memorizer on the training part and evaluate it on the test part by stratum."""
    if not split.train:
        raise ValidationError("memorization oracle needs a non-empty training part")
    train = np.asarray(split.train, dtype=np.int64)
    test = np.asarray(split.test, dtype=np.int64)
    clf = MemorizationClassifier(n_jobs=threads).fit(synth.features[train], synth.dataset.labels[train])
    preds = clf.predict(synth.features[test]).astype(np.float64)
    pset = PredictionSet(preds, test)
    return stratified_eval(pset, synth.dataset, split, 0.5, zero_division, skip_degenerate)


@dataclass(frozen=True, eq=False)
class OracleResult:
    split_seed: int
    random: StratifiedReport
    zero_shot: StratifiedReport
    zero_shot_trial: Optional[int]

    @property
    def f1_gap(self) -> float:
        return self.random.all.f1 - self.zero_shot.all.f1

    def to_dict(self) -> dict:
        return {
            "split_seed": self.split_seed,
            "zero_shot_trial": self.zero_shot_trial,
            "f1_gap": self.f1_gap,
            "random": self.random.to_dict(),
            "zero_shot": self.zero_shot.to_dict(),
        }


def demo_leakage(
    synth: SynthDataset,
    split_seed: int,
    fractions: Sequence[float] = (0.6, 0.2, 0.2),
    thresholds: Thresholds | None = None,
    threads: int = 1,
) -> OracleResult:
    """Evaluate the memorizer under a random split and a zero-shot split drawn with the same seed."""
    rand = random_split(synth.dataset, fractions, split_seed)
    zs = search_split(synth.dataset, thresholds or Thresholds(), split_seed, threads=threads)
    return OracleResult(
        int(split_seed),
        memorization_oracle(synth, rand, threads),
        memorization_oracle(synth, zs, threads),
        zs.trial_index,
    )
