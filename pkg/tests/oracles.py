"""Independent reference implementations used as test oracles.

Written in the plainest possible style (Python loops, no shared code with the
library) so that agreement means something.
"""

import math


def stump_fit(X, r, min_leaf=1):
    """Exhaustive depth-1 least-squares split.

    Returns ``(feature, threshold, left_value, right_value)`` or
    ``(None, None, mean, mean)`` when no split reduces the error.
    Ties go to the lowest feature, then the lowest threshold.
    """
    n = len(r)
    mean = sum(r) / n
    base = sum((v - mean) ** 2 for v in r)
    best = None
    for f in range(len(X[0])):
        values = sorted(set(row[f] for row in X))
        for a, b in zip(values, values[1:]):
            t = (a + b) / 2.0
            left = [r[i] for i in range(n) if X[i][f] <= t]
            right = [r[i] for i in range(n) if X[i][f] > t]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            ml = sum(left) / len(left)
            mr = sum(right) / len(right)
            sse = sum((v - ml) ** 2 for v in left) + sum((v - mr) ** 2 for v in right)
            if best is None or sse < best[0] - 1e-10 * base:
                best = (sse, f, t, ml, mr)
    if best is None or not base - best[0] > 1e-12 * base:
        return None, None, mean, mean
    return best[1:]


def boost_stumps(X, y, n_learners, shrinkage, min_leaf=1):
    """Steps: F0 = mean(y); fit a stump to y - F; F += shrinkage * stump."""
    n = len(y)
    f0 = sum(y) / n
    F = [f0] * n
    stumps = []
    for _ in range(n_learners):
        r = [y[i] - F[i] for i in range(n)]
        stump = stump_fit(X, r, min_leaf)
        stumps.append(stump)
        F = [F[i] + shrinkage * stump_eval(stump, X[i]) for i in range(n)]
    return f0, stumps


def stump_eval(stump, x):
    f, t, lv, rv = stump
    if f is None:
        return lv
    return lv if x[f] <= t else rv


def boost_predict(model, x, shrinkage):
    f0, stumps = model
    return f0 + sum(shrinkage * stump_eval(s, x) for s in stumps)


def scc(actual, predicted):
    denom = max(sum(actual) / len(actual), 1.0)
    return sum(math.exp(-abs(a - p) / denom) for a, p in zip(actual, predicted)) / len(actual)
