"""Brute-force reference implementations, written independently of the package.

Everything here favors obviousness over speed: explicit loops, pure Python
sums, no shared helpers with the code under test.
"""

from __future__ import annotations

import math
from itertools import combinations


def mean(xs):
    return sum(xs) / len(xs)


def pearson(x, y):
    mx, my = mean(x), mean(y)
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def average_ranks(x):
    """1-based ranks; tied values share the mean of the positions they span."""
    ranks = []
    for v in x:
        below = sum(1 for w in x if w < v)
        equal = sum(1 for w in x if w == v)
        ranks.append(below + (equal + 1) / 2)
    return ranks


def spearman(x, y):
    return pearson(average_ranks(x), average_ranks(y))


def r2(y, yhat):
    my = mean(y)
    return 1 - sum((a - b) ** 2 for a, b in zip(y, yhat)) / sum((a - my) ** 2 for a in y)


def auc(labels, scores):
    pos = [s for l, s in zip(labels, scores) if l]
    neg = [s for l, s in zip(labels, scores) if not l]
    won = 0.0
    for p in pos:
        for n in neg:
            won += 1.0 if p > n else 0.5 if p == n else 0.0
    return won / (len(pos) * len(neg))


def ridge_gradient_descent(X, y, lam, steps=20000):
    """Minimize sum((y - b - X beta)^2) + lam |beta|^2 by plain gradient descent.

    Uses numpy only for the matrix products; the step size comes from a
    bound on the Hessian's largest eigenvalue.
    """
    import numpy as np

    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    A = np.hstack([np.ones((n, 1)), X])
    penalty = np.diag([0.0] + [lam] * d)
    H = 2 * (A.T @ A + penalty)
    step = 1.0 / np.linalg.norm(H, 2)
    theta = np.zeros(d + 1)
    for _ in range(steps):
        grad = 2 * (A.T @ (A @ theta - y) + penalty @ theta)
        theta -= step * grad
    return theta[0], theta[1:]


def mean_pairwise_distance(rows):
    total, count = 0.0, 0
    for a, b in combinations(rows, 2):
        total += math.sqrt(sum((p - q) ** 2 for p, q in zip(a, b)))
        count += 1
    return total / count


def mean_cross_distance(rows_a, rows_b):
    total = 0.0
    for a in rows_a:
        for b in rows_b:
            total += math.sqrt(sum((p - q) ** 2 for p, q in zip(a, b)))
    return total / (len(rows_a) * len(rows_b))


def valid_correlation(tile, patch):
    """Stride-1 valid-mode cross-correlation as nested lists."""
    h, w = len(tile), len(tile[0])
    m = len(patch)
    out = []
    for i in range(h - m + 1):
        row = []
        for j in range(w - m + 1):
            row.append(sum(tile[i + a][j + b] * patch[a][b] for a in range(m) for b in range(m)))
        out.append(row)
    return out
