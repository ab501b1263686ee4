import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from _oracles import scalar_bce
from pedsplit.exceptions import DegenerateRatio, ParseError, ShapeMismatch, ValidationError
from pedsplit.weights import (
    CLAMP_EPS,
    ImbalanceWeights,
    WeightFunctionSpec,
    WeightTable,
    compute_weights,
    dumps_weights,
    export_weights,
    load_weights,
    weighted_bce,
    weighted_bce_grad,
)

ratios_open = st.floats(1e-6, 1 - 1e-6)


def test_weight_function_alpha_rules():
    with pytest.raises(ValidationError):
        WeightFunctionSpec("wf3")
    with pytest.raises(ValidationError):
        WeightFunctionSpec("wf1", 1.0)
    with pytest.raises(ValidationError):
        WeightFunctionSpec("wf3", -0.5)
    with pytest.raises(ValidationError):
        WeightFunctionSpec("wf9")
    assert WeightFunctionSpec("WF2").kind == "wf2"


def test_wf2_balanced():
    t = compute_weights([0.5], WeightFunctionSpec("wf2"))
    assert (t.positive[0], t.negative[0]) == (1.0, 1.0)


def test_wf3_alpha_one_reduces():
    t = compute_weights([0.2], WeightFunctionSpec("wf3", 1.0))
    assert t.positive[0] == 0.8 and t.negative[0] == 0.2


def test_wf1_high_precision():
    mpmath.mp.dps = 50
    t = compute_weights([0.2], WeightFunctionSpec("wf1"))
    assert abs(t.positive[0] - float(mpmath.e ** mpmath.mpf("0.8"))) <= 1e-12
    assert abs(t.negative[0] - float(mpmath.e ** mpmath.mpf("0.2"))) <= 1e-12


def test_none_and_degenerate():
    t = compute_weights([0.0, 1.0], WeightFunctionSpec("none"))
    assert t.positive.tolist() == [1.0, 1.0]
    compute_weights([0.0, 1.0], WeightFunctionSpec("wf1"))
    for kind, alpha in (("wf2", None), ("wf3", 2.0)):
        with pytest.raises(DegenerateRatio):
            compute_weights([0.3, 0.0], WeightFunctionSpec(kind, alpha))
    with pytest.raises(ValidationError):
        compute_weights([1.2], WeightFunctionSpec("wf1"))


@given(ratios_open, st.floats(0, 50))
def test_wf3_sums_to_one(r, a):
    t = compute_weights([r], WeightFunctionSpec("wf3", a))
    assert abs(t.positive[0] + t.negative[0] - 1.0) <= 1e-15


@given(ratios_open)
def test_wf3_alpha_zero_is_half(r):
    t = compute_weights([r], WeightFunctionSpec("wf3", 0.0))
    assert t.positive[0] == 0.5 and t.negative[0] == 0.5


@given(st.floats(1e-6, 0.5 - 1e-9), st.sampled_from(["wf1", "wf2", "wf3"]), st.floats(0.1, 10))
def test_minority_emphasis(r, kind, a):
    spec = WeightFunctionSpec(kind, a if kind == "wf3" else None)
    t = compute_weights([r], spec)
    assert t.positive[0] > t.negative[0]


@pytest.mark.parametrize("kind", ["wf1", "wf2", "wf3"])
def test_symmetric_at_half(kind):
    t = compute_weights([0.5], WeightFunctionSpec(kind, 1.7 if kind == "wf3" else None))
    assert t.positive[0] == t.negative[0]
    if kind == "wf1":
        assert t.positive[0] == math.exp(0.5)


def test_wf3_matches_reciprocal_form():
    rng = np.random.default_rng(0)
    r = rng.uniform(0.01, 0.99, 200)
    a = 2.5
    t = compute_weights(r, WeightFunctionSpec("wf3", a))
    inv_r, inv_q = (1 / r) ** a, (1 / (1 - r)) ** a
    np.testing.assert_allclose(t.positive, inv_r / (inv_r + inv_q), rtol=1e-13)
    np.testing.assert_allclose(t.negative, inv_q / (inv_r + inv_q), rtol=1e-13)


def test_wf3_large_alpha():
    # (3/7)^500 ~ 1e-184 still fits a double
    t = compute_weights([0.3, 0.5, 0.7], WeightFunctionSpec("wf3", 500.0))
    assert np.isfinite(t.positive).all() and (t.positive > 0).all() and (t.negative > 0).all()
    # at alpha=5000 the exact weights are below the smallest double
    with pytest.raises(ValidationError):
        compute_weights([0.3, 0.7], WeightFunctionSpec("wf3", 5000.0))


# -- loss -----------------------------------------------------------------------


def test_bce_analytic_value():
    t = compute_weights([0.5], WeightFunctionSpec("none"))
    loss = weighted_bce([[0.5]], [[1]], t)
    assert abs(loss.mean_per_sample - math.log(2)) <= 1e-15


def test_bce_clamp_bound():
    y = np.array([[1, 0, 1], [0, 0, 1]])
    t = compute_weights([0.2, 0.4, 0.7], WeightFunctionSpec("wf1"))
    loss = weighted_bce(y.astype(float), y, t)
    bound = 3 * max(t.positive.max(), t.negative.max()) * -math.log(1 - CLAMP_EPS)
    assert (loss.per_sample <= bound).all()


def test_bce_matches_scalar_loop():
    rng = np.random.default_rng(12)
    p = rng.random((20, 4))
    y = rng.integers(0, 2, (20, 4))
    t = compute_weights(rng.uniform(0.1, 0.9, 4), WeightFunctionSpec("wf2"))
    loss = weighted_bce(p, y, t)
    oracle = scalar_bce(p.tolist(), y.tolist(), t.positive.tolist(), t.negative.tolist())
    np.testing.assert_allclose(loss.per_sample, oracle, rtol=0, atol=1e-12)
    assert abs(loss.mean_per_sample - sum(oracle) / 20) <= 1e-12
    assert abs(loss.mean_per_element - sum(oracle) / 80) <= 1e-12


def test_uniform_weights_equal_plain_bce():
    rng = np.random.default_rng(4)
    p = rng.random((30, 3))
    y = rng.integers(0, 2, (30, 3))
    t = compute_weights([0.3, 0.3, 0.3], WeightFunctionSpec("none"))
    loss = weighted_bce(p, y, t)
    plain = [-sum(math.log(pij) if yij else math.log(1 - pij) for pij, yij in zip(pr, yr)) for pr, yr in zip(p.tolist(), y.tolist())]
    np.testing.assert_allclose(loss.per_sample, plain, rtol=0, atol=1e-12)


def test_bce_shape_errors():
    t = compute_weights([0.3, 0.4], WeightFunctionSpec("wf1"))
    with pytest.raises(ShapeMismatch):
        weighted_bce(np.full((2, 2), 0.5), np.zeros((3, 2)), t)
    with pytest.raises(ValidationError):
        weighted_bce(np.full((2, 3), 0.5), np.zeros((2, 3)), t)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(99)
    h = 1e-6
    for _ in range(100):
        n, m = rng.integers(1, 6), rng.integers(1, 5)
        p = rng.uniform(0.05, 0.95, (n, m))
        y = rng.integers(0, 2, (n, m))
        t = compute_weights(rng.uniform(0.05, 0.95, m), WeightFunctionSpec("wf3", float(rng.uniform(0, 3))))
        g = weighted_bce_grad(p, y, t)
        num = np.empty_like(p)
        for i in range(n):
            for j in range(m):
                up, dn = p.copy(), p.copy()
                up[i, j] += h
                dn[i, j] -= h
                num[i, j] = (weighted_bce(up, y, t).per_sample[i] - weighted_bce(dn, y, t).per_sample[i]) / (2 * h)
        np.testing.assert_allclose(g, num, rtol=0, atol=1e-6)


def test_gradient_zero_inside_clamp():
    t = compute_weights([0.5], WeightFunctionSpec("none"))
    g = weighted_bce_grad([[0.0], [1.0]], [[1], [0]], t)
    assert g.tolist() == [[0.0], [0.0]]


# -- estimator and persistence ----------------------------------------------------


def test_imbalance_weights_estimator():
    y = np.array([[1, 0], [0, 0], [0, 1], [0, 1]])
    est = ImbalanceWeights("wf1").fit(y)
    np.testing.assert_allclose(est.table_.ratios, [0.25, 0.5])
    np.testing.assert_allclose(est.positive_weight_, np.exp([0.75, 0.5]))
    assert est.loss(np.full((4, 2), 0.5), y) > 0
    assert est.get_params() == {"kind": "wf1", "alpha": None}


def test_export_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(1)
    names = tuple(f"attr{j:02d}" for j in range(35))
    t = compute_weights(rng.uniform(0.01, 0.99, 35), WeightFunctionSpec("wf3", 0.7), names)
    path = tmp_path / "w.json"
    export_weights(t, path)
    back = load_weights(path)
    assert len(back) == 35
    assert back.positive.tobytes() == t.positive.tobytes()
    assert back.negative.tobytes() == t.negative.tobytes()
    assert back.ratios.tobytes() == t.ratios.tobytes()
    assert back.spec == t.spec and back.attribute_names == names
    assert dumps_weights(back) == path.read_text()


def test_load_rejects_bad_ratio_under_wf2(tmp_path):
    t = compute_weights([0.3, 0.6], WeightFunctionSpec("wf2"))
    doc = json.loads(dumps_weights(t))
    doc["attributes"][1]["ratio"] = 1.0
    path = tmp_path / "w.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(DegenerateRatio):
        load_weights(path)
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_weights(path)


def test_weight_table_validation():
    with pytest.raises(ValidationError):
        WeightTable([1.0, -1.0], [1.0, 1.0], [0.5, 0.5], WeightFunctionSpec("none"))
