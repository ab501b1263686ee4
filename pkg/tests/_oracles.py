"""Independent reference implementations used as test oracles.

Everything here is written with plain Python loops and fractions so it shares
no code path with the package under test.
"""

from __future__ import annotations

import math
from fractions import Fraction


def _ratio(num, den, policy):
    """Return a Fraction, or None when the sample is skipped."""
    if den:
        return Fraction(num, den)
    if policy == "one":
        return Fraction(1)
    if policy == "skip":
        return None
    return Fraction(0)


def _mean(values):
    kept = [v for v in values if v is not None]
    if not kept:
        return Fraction(0)
    return sum(kept, Fraction(0)) / len(kept)


def brute_force_metrics(preds, labels, policy="eps-zero"):
    """Enumerate confusion cells one element at a time; exact rational arithmetic.

    Returns a dict of floats with the keys accu, prec, recall, f1, ma, mpr,
    mnr (the label-level ones only when every attribute has both classes).
    """
    n = len(labels)
    m = len(labels[0]) if n else 0
    acc, prec, rec = [], [], []
    for i in range(n):
        tp = fp = fn = 0
        for j in range(m):
            yh, y = int(preds[i][j]), int(labels[i][j])
            if yh == 1 and y == 1:
                tp += 1
            elif yh == 1 and y == 0:
                fp += 1
            elif yh == 0 and y == 1:
                fn += 1
        acc.append(_ratio(tp, tp + fp + fn, policy))
        prec.append(_ratio(tp, tp + fp, policy))
        rec.append(_ratio(tp, tp + fn, policy))
    p, r = _mean(prec), _mean(rec)
    out = {
        "accu": float(_mean(acc)),
        "prec": float(p),
        "recall": float(r),
        "f1": float(2 * p * r / (p + r)) if p + r else 0.0,
    }
    pr_terms, nr_terms = [], []
    degenerate = False
    for j in range(m):
        tp = tn = fp = fn = 0
        for i in range(n):
            yh, y = int(preds[i][j]), int(labels[i][j])
            tp += yh == 1 and y == 1
            tn += yh == 0 and y == 0
            fp += yh == 1 and y == 0
            fn += yh == 0 and y == 1
        if tp + fn == 0 or tn + fp == 0:
            degenerate = True
            continue
        pr_terms.append(Fraction(tp, tp + fn))
        nr_terms.append(Fraction(tn, tn + fp))
    out["degenerate"] = degenerate
    if pr_terms:
        mpr = sum(pr_terms, Fraction(0)) / len(pr_terms)
        mnr = sum(nr_terms, Fraction(0)) / len(nr_terms)
        out.update(mpr=float(mpr), mnr=float(mnr), ma=float((mpr + mnr) / 2))
    return out


def recompute_criteria(image_ids, identity_ids, labels, parts, t_id, t_img, t_attr):
    """Check the five construction criteria from scratch.

    ``parts`` maps train/valid/test to lists of image ids.  Returns a dict of
    booleans keyed 1..5 plus the measured quantities.
    """
    ident = dict(zip(image_ids, identity_ids))
    row = {iid: i for i, iid in enumerate(image_ids)}
    all_ids = {k for k in identity_ids if k is not None}
    ids = {p: {ident[i] for i in parts[p] if ident[i] is not None} for p in parts}
    k_all = len(all_ids)
    k_train = len(ids["train"])
    target = math.ceil(Fraction(3 * k_all, 5))
    assigned = set(parts["train"]) | set(parts["valid"]) | set(parts["test"])
    identified = {i for i in image_ids if ident[i] is not None}
    c1 = (
        ids["train"] | ids["valid"] | ids["test"] == all_ids
        and identified <= assigned
        and abs(k_train - target) <= t_id
    )
    c2 = not (ids["train"] & ids["valid"] or ids["train"] & ids["test"] or ids["valid"] & ids["test"])
    half = Fraction(k_all - k_train, 2)
    valid_slack = abs(len(ids["valid"]) - half)
    c3 = valid_slack <= t_id
    img_diff = abs(len(parts["test"]) - len(parts["valid"]))
    c4 = img_diff <= t_img

    def ratios(p):
        n = len(parts[p])
        return [Fraction(sum(labels[row[i]][j] for i in parts[p]), n) for j in range(len(labels[0]))]

    if all(parts[p] for p in parts):
        rt, rv, rs = ratios("train"), ratios("valid"), ratios("test")
        d_tv = max(abs(a - b) for a, b in zip(rt, rv))
        d_tt = max(abs(a - b) for a, b in zip(rt, rs))
        tol = Fraction(t_attr)
        c5 = d_tv <= tol and d_tt <= tol
    else:
        d_tv = d_tt = None
        c5 = False
    return {
        1: c1, 2: c2, 3: c3, 4: c4, 5: c5,
        "train_slack": abs(k_train - target),
        "valid_slack": float(valid_slack),
        "image_difference": img_diff,
        "max_train_valid": None if d_tv is None else float(d_tv),
        "max_train_test": None if d_tt is None else float(d_tt),
    }


def scalar_bce(probs, labels, w_pos, w_neg, eps=1e-7):
    """Per-sample weighted BCE with a scalar loop."""
    out = []
    for prow, yrow in zip(probs, labels):
        total = 0.0
        for j, (p, y) in enumerate(zip(prow, yrow)):
            q = min(max(p, eps), 1.0 - eps)
            if y == 1:
                total += -w_pos[j] * math.log(q)
            else:
                total += -w_neg[j] * math.log(1.0 - q)
        out.append(total)
    return out


def nearest_brute(train, queries):
    """Index of the nearest training row, first on ties, quadratic scan."""
    out = []
    for q in queries:
        best, best_d = -1, None
        for i, x in enumerate(train):
            d = sum((a - b) ** 2 for a, b in zip(q, x))
            if best_d is None or d < best_d:
                best, best_d = i, d
        out.append(best)
    return out
