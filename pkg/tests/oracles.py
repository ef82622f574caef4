"""Independent reference implementations used as test oracles.

None of these call into the package; they are deliberately simple (loops,
exhaustive enumeration, high-precision arithmetic) rather than fast.
"""

import itertools
import math

import mpmath
import numpy as np


def covariance_loops(x):
    """Sample covariance by explicit double loop, n - 1 denominator."""
    x = [list(map(float, row)) for row in x]
    n, d = len(x), len(x[0])
    means = [sum(row[j] for row in x) / n for j in range(d)]
    out = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            out[a, b] = sum((row[a] - means[a]) * (row[b] - means[b]) for row in x) / (n - 1)
    return out


def _tridiagonalize(a):
    """Householder reduction of a symmetric matrix to (diagonal, off-diagonal)."""
    a = np.array(a, dtype=float)
    n = a.shape[0]
    for k in range(n - 2):
        x = a[k + 1:, k].copy()
        alpha = -math.copysign(np.linalg.norm(x), x[0] if x[0] != 0 else 1.0)
        v = x.copy()
        v[0] -= alpha
        vn = np.linalg.norm(v)
        if vn == 0:
            continue
        v /= vn
        h = np.eye(n)
        h[k + 1:, k + 1:] -= 2.0 * np.outer(v, v)
        a = h @ a @ h
    return np.diag(a).copy(), np.diag(a, 1).copy()


def _count_below(diag, off, s):
    """Number of eigenvalues of the tridiagonal matrix strictly below ``s`` (Sturm count)."""
    count = 0
    q = 1.0
    for i in range(len(diag)):
        b2 = off[i - 1] ** 2 if i > 0 else 0.0
        q = diag[i] - s - (b2 / q if i > 0 else 0.0)
        if q == 0.0:
            q = -1e-300
        if q < 0:
            count += 1
    return count


def eigenvalues_bisection(a, tol=1e-13):
    """Eigenvalues (descending) of a symmetric matrix by Sturm-sequence bisection."""
    diag, off = _tridiagonalize(a)
    n = len(diag)
    radius = np.abs(np.concatenate([off, [0.0]])) + np.abs(np.concatenate([[0.0], off]))
    lo = float(np.min(diag - radius)) - 1.0
    hi = float(np.max(diag + radius)) + 1.0
    eps = tol * max(1.0, abs(lo), abs(hi))
    out = []
    for j in range(n):
        # find the (j + 1)-th smallest eigenvalue
        a_, b_ = lo, hi
        while b_ - a_ > eps:
            mid = 0.5 * (a_ + b_)
            if _count_below(diag, off, mid) > j:
                b_ = mid
            else:
                a_ = mid
        out.append(0.5 * (a_ + b_))
    return np.array(out[::-1])


def kmeans_exhaustive(x, k):
    """Minimum WCSS over every assignment of the rows of ``x`` to ``k`` labels."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    sq = np.sum(x * x, axis=1)
    best = math.inf
    labelings = itertools.product(range(k), repeat=n - 1)  # first point fixed to label 0
    chunk = 1 << 15
    while True:
        block = np.array(list(itertools.islice(labelings, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        labels = np.concatenate([np.zeros((len(block), 1), dtype=np.int64), block], axis=1)
        total = np.full(len(labels), float(np.sum(sq)))
        for c in range(k):
            mask = (labels == c).astype(float)
            size = mask.sum(axis=1)
            sums = mask @ x
            with np.errstate(invalid="ignore", divide="ignore"):
                total -= np.where(size > 0, np.sum(sums * sums, axis=1) / size, 0.0)
        best = min(best, float(total.min()))
    return max(best, 0.0)


def normal_ppf_mp(u, dps=40):
    mpmath.mp.dps = dps
    return float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(u) - 1))


def ks_enumerate(a, b):
    """Two-sample KS distance by evaluating both ECDFs at every pooled point."""
    a, b = list(a), list(b)
    best = 0.0
    for t in a + b:
        fa = sum(1 for v in a if v <= t) / len(a)
        fb = sum(1 for v in b if v <= t) / len(b)
        best = max(best, abs(fa - fb))
    return best


def hamilton(weights, n):
    """Largest-remainder apportionment in exact rational arithmetic."""
    from fractions import Fraction

    w = [Fraction(x) for x in weights]
    total = sum(w)
    quotas = [x * n / total for x in w]
    base = [math.floor(q) for q in quotas]
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[: n - sum(base)]:
        base[i] += 1
    return base
