"""Line-delimited JSON file formats for datasets, splits and predictions.

Every file is UTF-8 text with one JSON object per line: a header object,
one object per record and an optional footer ``{"sha256": "<hex>"}`` holding
the SHA-256 digest of all preceding bytes.  Writers always emit the footer,
so changing any single character of a written file is detected on read.
``\\r\\n`` line endings are normalized to ``\\n`` before hashing.

A dataset's checksum is the SHA-256 of its canonical serialization (header
and records, no footer).  Split and prediction files store that checksum to
bind themselves to one exact dataset.  See ``docs/formats.md`` for the
grammar.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .core import AttributeSchema, Dataset
from .exceptions import (
    ChecksumMismatch,
    OverlappingSplit,
    ParseError,
    ProbabilityOutOfRange,
    SchemaMismatch,
    ValidationError,
)
from .metrics import PredictionSet
from .splitter import PARTS, CriteriaReport, SplitSpec, Thresholds

FORMAT_VERSION = 1
DATASET_FORMAT = "pedsplit.dataset"
SPLIT_FORMAT = "pedsplit.split"
PREDICTIONS_FORMAT = "pedsplit.predictions"


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_checksum(path) -> str:
    return sha256_hex(Path(path).read_bytes())


def _with_footer(body: str) -> bytes:
    raw = body.encode("utf-8")
    return raw + (_dumps({"sha256": sha256_hex(raw)}) + "\n").encode("utf-8")


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _split_footer(raw: bytes) -> tuple[bytes, Optional[str]]:
    # only an exactly canonical, newline-terminated last line counts as a footer
    if not raw.endswith(b"\n"):
        return raw, None
    cut = raw.rfind(b"\n", 0, len(raw) - 1) + 1
    line = raw[cut:-1]
    try:
        obj = json.loads(line.decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return raw, None
    if isinstance(obj, dict) and set(obj) == {"sha256"} and _dumps(obj).encode("ascii") == line:
        return raw[:cut], obj["sha256"]
    return raw, None


def _read_lines(path, expected_format: str) -> tuple[dict, list[tuple[int, dict]]]:
    """Parse a file into (header, [(line_number, record), ...]), verifying the footer."""
    raw = Path(path).read_bytes().replace(b"\r\n", b"\n")
    body, footer = _split_footer(raw)
    if footer is not None and sha256_hex(body) != footer:
        raise ChecksumMismatch(f"{path}: content does not match its sha256 footer")
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8: {exc}", path) from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    parsed = []
    for no, line in enumerate(lines, start=1):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path, no) from None
        if not isinstance(obj, dict):
            raise ParseError("each line must be a JSON object", path, no)
        parsed.append((no, obj))
    if not parsed:
        raise ParseError("missing header", path)
    header_no, header = parsed[0]
    if header.get("format") != expected_format:
        raise ParseError(f"expected format {expected_format!r}, got {header.get('format')!r}", path, header_no)
    if header.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported version {header.get('version')!r}", path, header_no)
    return header, parsed[1:]


# ---------------------------------------------------------------------------
# datasets


def _dataset_lines(dataset: Dataset) -> Iterator[str]:
    yield _dumps({"format": DATASET_FORMAT, "version": FORMAT_VERSION, "attributes": list(dataset.attribute_names)})
    for iid, ident, row in zip(dataset.image_ids, dataset.identity_ids, dataset.labels.tolist()):
        yield _dumps({"image_id": iid, "identity_id": ident, "labels": row})


def dumps_dataset(dataset: Dataset) -> str:
    """Canonical text of ``dataset`` without the footer."""
    return "".join(line + "\n" for line in _dataset_lines(dataset))


def dataset_checksum(dataset: Dataset) -> str:
    return sha256_hex(dumps_dataset(dataset).encode("utf-8"))


def write_dataset(dataset: Dataset, path) -> str:
    """Write the canonical file; returns the dataset checksum."""
    body = dumps_dataset(dataset)
    _atomic_write(path, _with_footer(body))
    return sha256_hex(body.encode("utf-8"))


def read_dataset(path) -> Dataset:
    header, records = _read_lines(path, DATASET_FORMAT)
    names = header.get("attributes")
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ParseError("header 'attributes' must be a list of strings", path, 1)
    try:
        schema = AttributeSchema(tuple(names))
    except ValidationError as exc:
        raise ParseError(str(exc), path, 1) from None
    m = len(schema)
    image_ids, identity_ids = [], []
    labels = np.empty((len(records), m), dtype=np.uint8)
    for row, (no, rec) in enumerate(records):
        iid = rec.get("image_id")
        if not isinstance(iid, str) or not iid:
            raise ParseError("record needs a non-empty string 'image_id'", path, no)
        ident = rec.get("identity_id")
        if ident is not None and not isinstance(ident, str):
            raise ParseError(f"identity_id of {iid!r} must be a string or null", path, no)
        lab = rec.get("labels")
        if not isinstance(lab, list):
            raise ParseError(f"labels of {iid!r} must be a list", path, no)
        if len(lab) != m:
            raise SchemaMismatch(f"image {iid!r} has {len(lab)} labels, expected {m}", path, no)
        if any(type(v) is not int or v not in (0, 1) for v in lab):
            raise ParseError(f"labels of {iid!r} must be 0 or 1", path, no)
        image_ids.append(iid)
        identity_ids.append(ident)
        labels[row] = lab
    if not image_ids:
        raise ParseError("dataset has no records", path)
    try:
        return Dataset(schema, tuple(image_ids), tuple(identity_ids), labels)
    except ValidationError as exc:
        raise ParseError(str(exc), path) from None


# ---------------------------------------------------------------------------
# splits


def summarize_criteria(report: CriteriaReport) -> dict:
    return {"passed": report.passed, "criteria": {str(c.number): c.passed for c in report.criteria}}


def dumps_split(split: SplitSpec, dataset: Dataset, summary: Optional[dict] = None) -> str:
    header = {
        "format": SPLIT_FORMAT,
        "version": FORMAT_VERSION,
        "dataset_sha256": dataset_checksum(dataset),
        "seed": split.seed,
        "thresholds": split.thresholds.to_dict() if split.thresholds else None,
        "trial_index": split.trial_index,
        "criteria": summary,
    }
    lines = [_dumps(header)]
    for part in PARTS:
        for p in split.part(part):
            lines.append(_dumps({"part": part, "image_id": dataset.image_ids[p]}))
    return "".join(line + "\n" for line in lines)


def write_split(split: SplitSpec, dataset: Dataset, path, report: CriteriaReport | dict | None = None) -> None:
    """Write ``split``; ``report`` (or a summary dict) fills the criteria field."""
    if isinstance(report, CriteriaReport):
        report = summarize_criteria(report)
    _atomic_write(path, _with_footer(dumps_split(split, dataset, report)))


def read_split_file(path, dataset: Dataset, check_dataset: bool = True) -> tuple[SplitSpec, Optional[dict]]:
    """Read a split and its stored criteria summary.

    Part disjointness is re-verified and a violation raises
    :class:`OverlappingSplit` naming the offending image ids.
    """
    header, records = _read_lines(path, SPLIT_FORMAT)
    if check_dataset and header.get("dataset_sha256") != dataset_checksum(dataset):
        raise ChecksumMismatch(f"{path}: split was produced for a different dataset")
    position = dataset.position_of()
    parts: dict[str, list[int]] = {p: [] for p in PARTS}
    owner: dict[str, str] = {}
    overlapping = []
    for no, rec in records:
        part, iid = rec.get("part"), rec.get("image_id")
        if part not in parts:
            raise ParseError(f"unknown part {part!r}", path, no)
        if not isinstance(iid, str):
            raise ParseError("record needs a string 'image_id'", path, no)
        if iid not in position:
            raise ValidationError(f"{path}:{no}: image id {iid!r} is not in the dataset")
        if iid in owner:
            overlapping.append(iid)
            continue
        owner[iid] = part
        parts[part].append(position[iid])
    if overlapping:
        raise OverlappingSplit(f"image ids listed in more than one place: {overlapping[:20]}", overlapping)
    th = header.get("thresholds")
    try:
        thresholds = Thresholds(**th) if th is not None else None
    except (TypeError, ValidationError) as exc:
        raise ParseError(f"bad thresholds: {exc}", path, 1) from None
    split = SplitSpec.from_positions(
        dataset, parts["train"], parts["valid"], parts["test"],
        seed=header.get("seed"), thresholds=thresholds, trial_index=header.get("trial_index"),
    )
    return split, header.get("criteria")


def read_split(path, dataset: Dataset, check_dataset: bool = True) -> SplitSpec:
    return read_split_file(path, dataset, check_dataset)[0]


# ---------------------------------------------------------------------------
# predictions


def _fmt_prob(p: float) -> str:
    return format(float(p), ".9g")


def dumps_predictions(predictions: PredictionSet, dataset: Dataset) -> str:
    header = {
        "format": PREDICTIONS_FORMAT,
        "version": FORMAT_VERSION,
        "dataset_sha256": dataset_checksum(dataset),
        "attributes": list(dataset.attribute_names),
    }
    lines = [_dumps(header)]
    order = np.argsort(predictions.positions, kind="stable")
    for i in order:
        iid = dataset.image_ids[int(predictions.positions[i])]
        probs = ",".join(_fmt_prob(v) for v in predictions.probabilities[i])
        lines.append('{"image_id":' + _dumps(iid) + ',"probs":[' + probs + "]}")
    return "".join(line + "\n" for line in lines)


def write_predictions(predictions: PredictionSet, dataset: Dataset, path) -> None:
    _atomic_write(path, _with_footer(dumps_predictions(predictions, dataset)))


def read_predictions(path, dataset: Dataset, allow_checksum_mismatch: bool = False) -> PredictionSet:
    """Read probabilities and align them to dataset order.

    Image ids the dataset lacks are reported in ``extra`` and ignored;
    dataset ids the file lacks are reported in ``missing``.
    """
    header, records = _read_lines(path, PREDICTIONS_FORMAT)
    if header.get("dataset_sha256") != dataset_checksum(dataset) and not allow_checksum_mismatch:
        raise ChecksumMismatch(f"{path}: predictions were produced for a different dataset")
    if header.get("attributes") != list(dataset.attribute_names):
        raise SchemaMismatch("attribute list differs from the dataset schema", path, 1)
    m = dataset.n_attributes
    position = dataset.position_of()
    rows: dict[int, list[float]] = {}
    extra = []
    seen = set()
    for no, rec in records:
        iid, probs = rec.get("image_id"), rec.get("probs")
        if not isinstance(iid, str):
            raise ParseError("record needs a string 'image_id'", path, no)
        if iid in seen:
            raise ParseError(f"duplicate image id {iid!r}", path, no)
        seen.add(iid)
        if not isinstance(probs, list) or len(probs) != m:
            raise SchemaMismatch(f"image {iid!r} needs {m} probabilities", path, no)
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in probs):
            raise ParseError(f"probabilities of {iid!r} must be numbers", path, no)
        vals = [float(v) for v in probs]
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise ProbabilityOutOfRange(f"{path}:{no}: probability outside [0, 1] for image {iid!r}")
        if iid not in position:
            extra.append(iid)
            continue
        rows[position[iid]] = vals
    positions = sorted(rows)
    matrix = np.array([rows[p] for p in positions], dtype=np.float64).reshape(len(positions), m)
    covered = set(positions)
    missing = tuple(dataset.image_ids[p] for p in range(dataset.n_samples) if p not in covered)
    return PredictionSet(matrix, np.array(positions, dtype=np.int64), missing, tuple(extra))

