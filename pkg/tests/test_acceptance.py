"""Acceptance criteria 1-9, one test each.

Every test prints a single ``AC<n> PASS|FAIL <detail>`` line.  Run the file
directly (``python3 tests/test_acceptance.py``) to get only those lines.
"""

import json
import math
import sys
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from _oracles import brute_force_metrics, scalar_bce  # noqa: E402
from pedsplit.cli import dispatch  # noqa: E402
from pedsplit.core import AttributeSchema, Dataset  # noqa: E402
from pedsplit.ingest import read_split, write_dataset, write_split  # noqa: E402
from pedsplit.metrics import ZERO_DIVISION_POLICIES, audit_leakage, instance_metrics, label_metrics  # noqa: E402
from pedsplit.splitter import SplitSpec, Thresholds, verify_split  # noqa: E402
from pedsplit.synth import make_shaped_dataset, placeholder_split  # noqa: E402
from pedsplit.weights import WeightFunctionSpec, compute_weights, weighted_bce, weighted_bce_grad  # noqa: E402

_capsys = None


def emit(number: int, ok: bool, detail: str) -> None:
    line = f"AC{number} {'PASS' if ok else 'FAIL'} {detail}"
    if _capsys is not None:
        with _capsys.disabled():
            print("\n" + line)
    else:
        print(line)
    assert ok, line


@pytest.fixture(autouse=True)
def _show(capsys):
    global _capsys
    _capsys = capsys
    yield
    _capsys = None


def run(*argv):
    return dispatch([str(a) for a in argv], {})


def masked(path):
    report = json.loads(Path(path).read_text())
    report.pop("runtime")
    return report


# -- 1 --------------------------------------------------------------------------


def test_ac1_published_counts_verify():
    start = time.perf_counter()
    rows = []
    ok = True
    for name, ids, imgs, diff, slack in (
        ("PETA", (5233, 1760, 1706), (11241, 3826, 3933), 107, 27),
        ("RAP", (1566, 505, 518), (17062, 4648, 4928), 280, 6.5),
    ):
        ds, split = placeholder_split(ids, imgs)
        report = verify_split(ds, split)
        measured_diff = report[4].measured["image_difference"]
        measured_slack = report[3].measured["valid_slack"]
        ok &= measured_diff == diff and measured_diff < 300
        ok &= measured_slack == slack and measured_slack <= 50
        ok &= all(report[n].passed for n in (1, 2, 3, 4))
        rows.append(f"{name} diff={measured_diff} slack={measured_slack}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 1.0
    emit(1, ok, f"{'; '.join(rows)} in {elapsed:.2f}s")


# -- 2 --------------------------------------------------------------------------


def test_ac2_paper_scale_search(tmp_path):
    data = tmp_path / "peta_shaped.jsonl"
    ds = make_shaped_dataset(8699, 19000, 35, seed=0)
    write_dataset(ds, data)
    times, ok = [], True
    for seed in range(10):
        out = tmp_path / f"s{seed}"
        start = time.perf_counter()
        code = run("split", "--dataset", data, "--out", out, "--seed", seed)
        times.append(time.perf_counter() - start)
        if code != 0:
            ok = False
            continue
        split = read_split(out / "split_v1.jsonl", ds)
        ok &= verify_split(ds, split, Thresholds()).passed
        ok &= run("verify", "--dataset", data, "--split", out / "split_v1.jsonl",
                  "--report", out / "verify.json", "--strict") == 0
    ok &= max(times) < 60
    emit(2, ok, f"10 seeds, slowest {max(times):.2f}s, total {sum(times):.1f}s")


# -- 3 and 4 ----------------------------------------------------------------------


def _random_instances(count=1000, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n, m = int(rng.integers(1, 21)), int(rng.integers(1, 6))
        yield rng.integers(0, 2, (n, m)), rng.integers(0, 2, (n, m))


def test_ac3_ac4_metric_oracle_and_decomposition():
    worst, worst_identity, evaluations, ok = 0.0, 0.0, 0, True
    for yhat, y in _random_instances():
        lab = None
        for policy in ZERO_DIVISION_POLICIES:
            bf = brute_force_metrics(yhat.tolist(), y.tolist(), policy)
            s = instance_metrics(yhat, y, policy)
            diffs = [s.accuracy - bf["accu"], s.precision - bf["prec"], s.recall - bf["recall"], s.f1 - bf["f1"]]
            if "ma" in bf:
                lab = lab or label_metrics(yhat, y, skip_degenerate=True)
                diffs += [lab.ma - bf["ma"], lab.mpr - bf["mpr"], lab.mnr - bf["mnr"]]
                worst_identity = max(worst_identity, abs(lab.ma - (lab.mpr + lab.mnr) / 2))
                evaluations += 1
            worst = max(worst, max(abs(d) for d in diffs))
    ok = worst <= 1e-12
    emit(3, ok, f"1000 instances x {len(ZERO_DIVISION_POLICIES)} policies, max deviation {worst:.1e}")
    emit(4, worst_identity <= 1e-12 and evaluations > 0,
         f"{evaluations} label-level evaluations, max |mA-(mPR+mNR)/2| {worst_identity:.1e}")


# -- 5 --------------------------------------------------------------------------


def test_ac5_weight_identities():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        r = float(rng.uniform(1e-6, 1 - 1e-6))
        a = float(rng.uniform(0, 20))
        t = compute_weights([r], WeightFunctionSpec("wf3", a))
        worst = max(worst, abs(t.positive[0] + t.negative[0] - 1.0))
    ok = worst <= 1e-15
    r = rng.uniform(0.001, 0.999, 200)
    t1 = compute_weights(r, WeightFunctionSpec("wf3", 1.0))
    ok &= bool((t1.positive == 1 - r).all())
    t2 = compute_weights([0.5], WeightFunctionSpec("wf2"))
    ok &= (t2.positive[0], t2.negative[0]) == (1.0, 1.0)
    mpmath.mp.dps = 50
    w1 = compute_weights([0.2], WeightFunctionSpec("wf1"))
    wf1_err = max(abs(w1.positive[0] - float(mpmath.exp(mpmath.mpf("0.8")))),
                  abs(w1.negative[0] - float(mpmath.exp(mpmath.mpf("0.2")))))
    ok &= wf1_err <= 1e-12
    emit(5, ok, f"wf3 sum deviation {worst:.1e}, wf1 error {wf1_err:.1e}")


# -- 6 --------------------------------------------------------------------------


def test_ac6_gradient_and_scalar_loss():
    rng = np.random.default_rng(6)
    h, worst = 1e-6, 0.0
    for _ in range(100):
        n, m = int(rng.integers(1, 8)), int(rng.integers(1, 6))
        p = rng.uniform(0.05, 0.95, (n, m))
        y = rng.integers(0, 2, (n, m))
        kind = ["wf1", "wf2", "wf3"][int(rng.integers(0, 3))]
        spec = WeightFunctionSpec(kind, float(rng.uniform(0, 3)) if kind == "wf3" else None)
        t = compute_weights(rng.uniform(0.05, 0.95, m), spec)
        g = weighted_bce_grad(p, y, t)
        for i in range(n):
            for j in range(m):
                up, dn = p.copy(), p.copy()
                up[i, j] += h
                dn[i, j] -= h
                num = (weighted_bce(up, y, t).per_sample[i] - weighted_bce(dn, y, t).per_sample[i]) / (2 * h)
                worst = max(worst, abs(g[i, j] - num))
    p = rng.random((40, 6))
    y = rng.integers(0, 2, (40, 6))
    t = compute_weights([0.3] * 6, WeightFunctionSpec("none"))
    oracle = scalar_bce(p.tolist(), y.tolist(), t.positive.tolist(), t.negative.tolist())
    loss_err = float(np.abs(weighted_bce(p, y, t).per_sample - oracle).max())
    emit(6, worst <= 1e-6 and loss_err <= 1e-12, f"gradient error {worst:.1e}, uniform loss error {loss_err:.1e}")


# -- 7 --------------------------------------------------------------------------


def test_ac7_leakage_demo(tmp_path):
    report = tmp_path / "demo.json"
    start = time.perf_counter()
    code = run("synth", "demo-leakage", "--report", report)
    elapsed = time.perf_counter() - start
    results = json.loads(report.read_text())["payload"]["results"] if code == 0 else []
    gaps, ok = [], code == 0 and len(results) == 5
    for res in results:
        rnd = res["random"]
        gap = rnd["all"]["F1"] - res["zero_shot"]["all"]["F1"]
        gaps.append(gap)
        ok &= gap >= 0.15
        ok &= "F1" in rnd["common"] and "F1" in rnd["unique"] and rnd["common"]["F1"] > rnd["unique"]["F1"]
    ok &= elapsed < 30
    emit(7, ok, f"min F1 gap {min(gaps, default=math.nan):.3f} over {len(gaps)} seeds in {elapsed:.1f}s")


# -- 8 --------------------------------------------------------------------------


def test_ac8_determinism(tmp_path):
    ds = make_shaped_dataset(8699, 19000, 35, seed=8)
    data = tmp_path / "d.jsonl"
    write_dataset(ds, data)
    split_runs, demo_runs = [], []
    for threads in (1, 1, 8):
        out = tmp_path / "split"
        assert run("split", "--dataset", data, "--out", out, "--seed", 11, "--versions", 3, "--threads", threads) == 0
        split_runs.append((
            [(out / f"split_v{v}.jsonl").read_bytes() for v in (1, 2, 3)],
            masked(out / "report.json"),
        ))
        report = tmp_path / "demo.json"
        assert run("synth", "demo-leakage", "--threads", threads, "--report", report) == 0
        demo_runs.append(masked(report))
    ok = split_runs[0] == split_runs[1] == split_runs[2] and demo_runs[0] == demo_runs[1] == demo_runs[2]
    emit(8, ok, "split and demo-leakage: 2 runs at 1 thread, 1 run at 8 threads")


# -- 9 --------------------------------------------------------------------------


def _planted(n_test, n_common):
    ids, parts = [], ([], [], [])
    for i in range(n_common):
        parts[0].append(len(ids))
        ids.append(f"c{i}")
        parts[2].append(len(ids))
        ids.append(f"c{i}")
    for i in range(n_test - n_common):
        parts[2].append(len(ids))
        ids.append(f"u{i}")
    for name in ("v0", "t0"):
        parts[1 if name == "v0" else 0].append(len(ids))
        ids.append(name)
    n = len(ids)
    labels = (np.arange(n)[:, None] % np.array([2, 3]) == 0).astype(np.uint8)
    ds = Dataset(AttributeSchema(("a", "b")), tuple(f"img{i}" for i in range(n)), tuple(ids), labels)
    return ds, SplitSpec.from_positions(ds, *parts)


def test_ac9_audit_planted_overlap(tmp_path):
    ok, rows = True, []
    for planted in (0.0, 0.30, 0.577):
        n_test = 7600
        n_common = round(planted * n_test)
        ds, split = _planted(n_test, n_common)
        data, split_path, report = tmp_path / "d.jsonl", tmp_path / "s.jsonl", tmp_path / "a.json"
        write_dataset(ds, data)
        write_split(split, ds, split_path)
        ok &= run("audit", "--dataset", data, "--split", split_path, "--report", report) == 0
        got = json.loads(report.read_text())["payload"]["common_proportion"]
        ok &= audit_leakage(ds, split).common_proportion == got
        if planted in (0.0, 0.30):
            ok &= got == planted
        else:
            ok &= got == n_common / n_test and abs(got - planted) <= 0.5 / n_test
        rows.append(f"{planted:.3f}->{got:.6f}")
    emit(9, ok, ", ".join(rows))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
