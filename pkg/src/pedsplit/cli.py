"""Command line entry point.

Option values resolve in increasing priority: built-in defaults, the
``[<subcommand>]`` table of a TOML file given with ``--config``, environment
variables ``PEDSPLIT_<OPTION>`` (for example ``PEDSPLIT_T_ID=40``), and
explicit flags.  The resolved configuration is logged as one JSON line and
echoed into the report so a run can be replayed from either.

Exit codes: 0 success, 1 domain failure (search exhausted, or criteria
failing under ``verify --strict``), 2 usage, I/O or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .core import positive_ratio
from .exceptions import PedsplitError, SearchExhausted
from .ingest import (
    dataset_checksum,
    file_checksum,
    read_dataset,
    read_predictions,
    read_split,
    write_dataset,
    write_split,
)
from .metrics import ZERO_DIVISION_POLICIES, audit_leakage, evaluate, format_table, stratified_eval
from .splitter import Thresholds, derive_seed, search_split, verify_split
from .synth import demo_leakage, generate, load_config, tomllib
from .weights import WeightFunctionSpec, compute_weights, export_weights

logger = logging.getLogger("pedsplit")

ENV_PREFIX = "PEDSPLIT_"
REPORT_NAME = "report.json"


@dataclass(frozen=True)
class Opt:
    flag: str
    type: Callable = str
    default: Any = None
    help: str = ""
    required: bool = False
    choices: Optional[Sequence[str]] = None
    flag_only: bool = False  # store_true

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


COMMON = [
    Opt("--config", str, None, "TOML file with a table of defaults per subcommand"),
    Opt("--threads", int, 1, "worker threads (results do not depend on it)"),
    Opt("--report", str, None, "where to write the JSON report"),
]

COMMANDS: dict[str, list[Opt]] = {
    "split": [
        Opt("--dataset", str, None, "dataset file", required=True),
        Opt("--seed", int, 0, "base seed"),
        Opt("--t-id", int, 50, "identity-count slack"),
        Opt("--t-img", int, 300, "valid/test image-count slack"),
        Opt("--t-attr", float, 0.03, "positive-ratio slack"),
        Opt("--max-trials", int, 100_000, "trial budget per version"),
        Opt("--versions", int, 1, "number of independent splits"),
        Opt("--out", str, None, "output directory", required=True),
    ],
    "verify": [
        Opt("--dataset", str, None, "dataset file", required=True),
        Opt("--split", str, None, "split file", required=True),
        Opt("--t-id", int, None, "override the split's identity slack"),
        Opt("--t-img", int, None, "override the split's image slack"),
        Opt("--t-attr", float, None, "override the split's ratio slack"),
        Opt("--strict", _bool, False, "exit 1 when a criterion fails", flag_only=True),
        Opt("--json", _bool, False, "print the JSON payload instead of the table", flag_only=True),
    ],
    "eval": [
        Opt("--dataset", str, None, "dataset file", required=True),
        Opt("--split", str, None, "split file", required=True),
        Opt("--preds", str, None, "prediction file", required=True),
        Opt("--threshold", float, 0.5, "classification threshold"),
        Opt("--zero-division", str, "eps-zero", "0/0 policy", choices=ZERO_DIVISION_POLICIES),
        Opt("--stratify", _bool, False, "also report common/unique identity strata", flag_only=True),
        Opt("--skip-degenerate", _bool, False, "drop attributes lacking positives or negatives", flag_only=True),
        Opt("--allow-checksum-mismatch", _bool, False, "accept predictions bound to another dataset", flag_only=True),
    ],
    "audit": [
        Opt("--dataset", str, None, "dataset file", required=True),
        Opt("--split", str, None, "split file", required=True),
    ],
    "weights": [
        Opt("--dataset", str, None, "dataset file", required=True),
        Opt("--split", str, None, "split file", required=True),
        Opt("--wf", str, None, "weight function", required=True, choices=("wf1", "wf2", "wf3", "none")),
        Opt("--alpha", float, None, "wf3 exponent (default 1.0)"),
        Opt("--out", str, None, "weights file", required=True),
    ],
    "synth": [
        Opt("--out", str, None, "output directory", required=True),
    ],
    "demo-leakage": [
        Opt("--seeds", str, None, "comma-separated split seeds (overrides the config)"),
    ],
}


def _add_opts(parser: argparse.ArgumentParser, opts: Sequence[Opt]) -> None:
    for o in opts:
        if o.flag_only:
            parser.add_argument(o.flag, dest=o.dest, action="store_const", const=True, default=None, help=o.help)
        else:
            parser.add_argument(o.flag, dest=o.dest, type=o.type, default=None, choices=o.choices, help=o.help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pedsplit", description="Identity-disjoint splitting and attribute evaluation.")
    parser.add_argument("--version", action="version", version=f"pedsplit {__version__}")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "split": "search identity-disjoint splits",
        "verify": "check a split against the construction criteria",
        "eval": "evaluate predictions on the test part",
        "audit": "measure train/test identity overlap",
        "weights": "export class-imbalance weights",
        "synth": "generate a synthetic dataset (or run 'synth demo-leakage')",
    }
    for name, h in helps.items():
        p = sub.add_parser(name, help=h, description=h)
        _add_opts(p, COMMON)
        _add_opts(p, COMMANDS[name])
        if name == "synth":
            inner = p.add_subparsers(dest="synth_command", metavar="ACTION")
            d = inner.add_parser("demo-leakage", help="random vs zero-shot split with the memorization oracle")
            _add_opts(d, COMMON)
            _add_opts(d, COMMANDS["demo-leakage"])
    return parser


def _command_key(ns) -> str:
    if ns.command == "synth" and getattr(ns, "synth_command", None) == "demo-leakage":
        return "demo-leakage"
    return ns.command


def resolve(ns: argparse.Namespace, env: Mapping[str, str], parser: argparse.ArgumentParser) -> dict:
    """Merge defaults, config file, environment and flags into one dict."""
    key = _command_key(ns)
    opts = COMMON + COMMANDS[key]
    file_values: dict = {}
    cfg_path = ns.config if ns.config is not None else env.get(ENV_PREFIX + "CONFIG")
    if cfg_path is not None and key not in ("synth", "demo-leakage"):
        with open(cfg_path, "rb") as fh:
            doc = tomllib.load(fh)
        file_values = {k.replace("-", "_"): v for k, v in doc.get(key, {}).items()}
        unknown = set(file_values) - {o.dest for o in opts}
        if unknown:
            raise PedsplitError(f"{cfg_path}: unknown keys in [{key}]: {sorted(unknown)}")
    out = {}
    for o in opts:
        value = o.default
        if o.dest in file_values:
            value = o.type(file_values[o.dest])
        env_val = env.get(ENV_PREFIX + o.dest.upper())
        if env_val is not None:
            try:
                value = o.type(env_val)
            except ValueError:
                parser.error(f"bad value for {ENV_PREFIX + o.dest.upper()}: {env_val!r}")
        cli_val = getattr(ns, o.dest, None)
        if cli_val is not None:
            value = cli_val
        if o.choices is not None and value is not None and value not in o.choices:
            parser.error(f"{o.flag} must be one of {list(o.choices)}")
        out[o.dest] = value
    if key in ("synth", "demo-leakage"):
        out["config"] = cfg_path
    missing = [o.flag for o in opts if o.required and out.get(o.dest) is None]
    if missing:
        parser.error(f"{key}: missing required option(s): {', '.join(missing)}")
    return out


def argv_from_run_config(command: str, run_config: Mapping[str, Any], threads: int = 1) -> list[str]:
    """Rebuild an argument vector that reproduces a logged run."""
    argv = ["synth", "demo-leakage"] if command == "demo-leakage" else [command]
    for k, v in run_config.items():
        if v is None or v is False:
            continue
        flag = "--" + k.replace("_", "-")
        if v is True:
            argv.append(flag)
        else:
            argv += [flag, str(v)]
    argv += ["--threads", str(threads)]
    return argv


# ---------------------------------------------------------------------------
# reports


def envelope(command: str, run_config: dict, threads: int, checksums: dict, kind: str, payload, exit_code: int) -> dict:
    return {
        "toolkit": "pedsplit",
        "toolkit_version": __version__,
        "command": command,
        "run_config": run_config,
        "input_checksums": checksums,
        "payload_kind": kind,
        "payload": payload,
        "exit_code": exit_code,
        "runtime": {"timestamp": datetime.now(timezone.utc).isoformat(), "threads": threads},
    }


def dump_report(report: dict) -> str:
    return json.dumps(report, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_report(report: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_report(report), encoding="utf-8", newline="\n")
    logger.info("report written to %s", path)


def _thresholds(rc: dict, base: Thresholds | None = None) -> Thresholds:
    base = base or Thresholds()
    return Thresholds(
        rc.get("t_id") if rc.get("t_id") is not None else base.t_id,
        rc.get("t_img") if rc.get("t_img") is not None else base.t_img,
        rc.get("t_attr") if rc.get("t_attr") is not None else base.t_attr,
        rc.get("max_trials") if rc.get("max_trials") is not None else base.max_trials,
    )


# ---------------------------------------------------------------------------
# subcommands; each returns (exit_code, payload_kind, payload, checksums, default_report_path)


def cmd_split(rc: dict, threads: int):
    dataset = read_dataset(rc["dataset"])
    out = Path(rc["out"])
    out.mkdir(parents=True, exist_ok=True)
    th = _thresholds(rc)
    if rc["versions"] < 1:
        raise PedsplitError("--versions must be >= 1")
    sums = {"dataset": dataset_checksum(dataset)}
    versions = []
    code = 0
    for v in range(rc["versions"]):
        seed = derive_seed(rc["seed"], v)
        name = f"split_v{v + 1}.jsonl"
        try:
            split = search_split(dataset, th, seed, threads=threads)
        except SearchExhausted as exc:
            logger.error("version %d: %s", v + 1, exc)
            versions.append({
                "version": v + 1, "seed": seed, "status": "exhausted",
                "best_trial_index": exc.best.trial_index, "criteria": exc.report.to_dict(),
            })
            code = 1
            break
        report = verify_split(dataset, split, th)
        write_split(split, dataset, out / name, report)
        versions.append({
            "version": v + 1, "seed": seed, "status": "found", "trial_index": split.trial_index,
            "split_file": name, "split_sha256": file_checksum(out / name), "criteria": report.to_dict(),
        })
        print(f"version {v + 1}: seed {seed}, trial {split.trial_index}, "
              f"identities {len(split.train_identities)}/{len(split.valid_identities)}/{len(split.test_identities)}, "
              f"images {len(split.train)}/{len(split.valid)}/{len(split.test)} -> {out / name}")
    return code, "CriteriaReport", {"versions": versions}, sums, out / REPORT_NAME


def cmd_verify(rc: dict, threads: int):
    dataset = read_dataset(rc["dataset"])
    split = read_split(rc["split"], dataset)
    th = _thresholds(rc, split.thresholds)
    report = verify_split(dataset, split, th)
    if rc["json"]:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.table())
    code = 1 if (rc["strict"] and not report.passed) else 0
    sums = {"dataset": dataset_checksum(dataset), "split": file_checksum(rc["split"])}
    return code, "CriteriaReport", report.to_dict(), sums, Path("pedsplit-verify-report.json")


def cmd_eval(rc: dict, threads: int):
    dataset = read_dataset(rc["dataset"])
    split = read_split(rc["split"], dataset)
    preds = read_predictions(rc["preds"], dataset, rc["allow_checksum_mismatch"])
    if preds.extra:
        logger.warning("%d predicted image ids are not in the dataset", len(preds.extra))
    sums = {"dataset": dataset_checksum(dataset), "split": file_checksum(rc["split"]), "preds": file_checksum(rc["preds"])}
    if rc["stratify"]:
        strat = stratified_eval(preds, dataset, split, rc["threshold"], rc["zero_division"], rc["skip_degenerate"])
        print(strat.table())
        return 0, "MetricsReport", {"stratified": True, "reports": strat.to_dict()}, sums, Path("pedsplit-eval-report.json")
    test = list(split.test)
    rep = evaluate(
        preds.rows(test), dataset.labels[np.asarray(test, dtype=np.int64)], rc["threshold"],
        rc["zero_division"], rc["skip_degenerate"], dataset.attribute_names, "test",
    )
    print(format_table({"test": rep}))
    return 0, "MetricsReport", {"stratified": False, "reports": {"all": rep.to_dict()}}, sums, Path("pedsplit-eval-report.json")


def cmd_audit(rc: dict, threads: int):
    dataset = read_dataset(rc["dataset"])
    split = read_split(rc["split"], dataset)
    audit = audit_leakage(dataset, split)
    print(audit.summary())
    sums = {"dataset": dataset_checksum(dataset), "split": file_checksum(rc["split"])}
    return 0, "LeakageAudit", audit.to_dict(), sums, Path("pedsplit-audit-report.json")


def cmd_weights(rc: dict, threads: int):
    dataset = read_dataset(rc["dataset"])
    split = read_split(rc["split"], dataset)
    alpha = rc["alpha"]
    if rc["wf"] == "wf3" and alpha is None:
        alpha = 1.0
    spec = WeightFunctionSpec(rc["wf"], alpha)
    ratios = positive_ratio(dataset, split.train)
    table = compute_weights(ratios, spec, dataset.attribute_names)
    export_weights(table, rc["out"])
    print(f"{len(table)} weight pairs ({spec.kind}) -> {rc['out']}")
    sums = {"dataset": dataset_checksum(dataset), "split": file_checksum(rc["split"])}
    payload = {"weight_function": spec.kind, "alpha": spec.alpha, "out": rc["out"], "out_sha256": file_checksum(rc["out"])}
    return 0, "WeightTable", payload, sums, Path(rc["out"]).with_suffix(".report.json")


def cmd_synth(rc: dict, threads: int):
    synth_cfg, _ = load_config(rc["config"])
    synth = generate(synth_cfg)
    out = Path(rc["out"])
    out.mkdir(parents=True, exist_ok=True)
    checksum = write_dataset(synth.dataset, out / "dataset.jsonl")
    np.save(out / "features.npy", np.ascontiguousarray(synth.features))
    print(f"{synth.dataset.n_samples} images of {synth_cfg.n_identities} identities -> {out}")
    payload = {
        "config": synth_cfg.to_dict(),
        "n_samples": synth.dataset.n_samples,
        "dataset_sha256": checksum,
        "features_sha256": file_checksum(out / "features.npy"),
    }
    sums = {"config": file_checksum(rc["config"])} if rc["config"] else {}
    return 0, "SynthSummary", payload, sums, out / REPORT_NAME


def cmd_demo(rc: dict, threads: int):
    synth_cfg, demo = load_config(rc["config"])
    seeds = demo.split_seeds
    if rc["seeds"]:
        seeds = tuple(int(s) for s in rc["seeds"].split(","))
    synth = generate(synth_cfg)
    results = []
    for s in seeds:
        res = demo_leakage(synth, s, demo.fractions, demo.thresholds, threads)
        results.append(res.to_dict())
        print(f"split seed {s}")
        print(format_table({f"random/{k}": res.random[k] for k in ("common", "unique", "all")}
                           | {f"zero-shot/{k}": res.zero_shot[k] for k in ("common", "unique", "all")}))
        print(f"F1 gap (random - zero-shot): {100 * res.f1_gap:.2f}\n")
    payload = {"config": synth_cfg.to_dict(), "fractions": list(demo.fractions), "results": results}
    sums = {"config": file_checksum(rc["config"])} if rc["config"] else {}
    return 0, "OracleResult", payload, sums, Path("pedsplit-demo-leakage-report.json")


HANDLERS = {
    "split": cmd_split,
    "verify": cmd_verify,
    "eval": cmd_eval,
    "audit": cmd_audit,
    "weights": cmd_weights,
    "synth": cmd_synth,
    "demo-leakage": cmd_demo,
}


def _setup_logging(level: str) -> None:
    if not any(getattr(h, "_pedsplit", False) for h in logger.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        handler._pedsplit = True
        logger.addHandler(handler)
        logger.propagate = False
    for h in logger.handlers:
        if getattr(h, "_pedsplit", False):
            h.stream = sys.stderr
    logger.setLevel(level)


def dispatch(argv: Sequence[str] | None = None, env: Mapping[str, str] | None = None) -> int:
    env = os.environ if env is None else env
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _setup_logging(ns.log_level)
    key = _command_key(ns)
    try:
        rc = resolve(ns, env, parser)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (PedsplitError, OSError) as exc:
        print(f"pedsplit: error: {exc}", file=sys.stderr)
        return 2
    threads = int(rc.pop("threads") or 1)
    report_path = rc.pop("report")
    logger.info("run config: %s", json.dumps({"command": key, **rc, "threads": threads}, sort_keys=True))
    try:
        code, kind, payload, sums, default_report = HANDLERS[key](rc, threads)
    except (PedsplitError, OSError, ValueError) as exc:
        print(f"pedsplit: error: {exc}", file=sys.stderr)
        return 2
    report = envelope(key, rc, threads, sums, kind, payload, code)
    try:
        write_report(report, report_path or default_report)
    except OSError as exc:
        print(f"pedsplit: error: cannot write report: {exc}", file=sys.stderr)
        return 2
    return code


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()
