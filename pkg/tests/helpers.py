"""Shared statistical helpers for the test suite."""
import math

import numpy as np

# chi-square 99th percentiles by degrees of freedom
CHI2_99 = {1: 6.635, 7: 18.475, 9: 21.666}
Z_99 = 2.576


def binomial_interval_99(p, n):
    half = Z_99 * math.sqrt(p * (1 - p) / n)
    return p - half, p + half


def welch_one_sided_p(a, b):
    """P-value for mean(a) > mean(b) under the normal approximation
    (appropriate for n >= ~100 per sample)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    se = math.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
    if se == 0:
        return 0.0 if a.mean() > b.mean() else 1.0
    z = (a.mean() - b.mean()) / se
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def chi2_independence_2x2(table):
    table = np.asarray(table, dtype=np.float64)
    row = table.sum(axis=1, keepdims=True)
    col = table.sum(axis=0, keepdims=True)
    expected = row * col / table.sum()
    return float(((table - expected) ** 2 / expected).sum())
