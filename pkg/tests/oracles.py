"""Independent oracles for expected-value tests.

These deliberately share no code with the package: coordinate descent for
the lasso, pair counting for AUC, refined grid search for the logistic MLE,
and eigendecomposition for PCA variances.
"""

import numpy as np


def cd_lasso(h, D, lam, tol=1e-10, max_iters=200000):
    """Cyclic coordinate descent for min ||h - D a||_2^2 + lam * ||a||_1."""
    h = np.asarray(h, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    k = D.shape[1]
    a = np.zeros(k)
    col_sq = np.einsum("ij,ij->j", D, D)
    r = h.copy()
    for _ in range(max_iters):
        delta = 0.0
        for j in range(k):
            if col_sq[j] == 0.0:
                continue
            old = a[j]
            c = D[:, j] @ r + col_sq[j] * old
            mag = abs(c) - lam / 2.0
            new = np.sign(c) * mag / col_sq[j] if mag > 0 else 0.0
            if new != old:
                r -= D[:, j] * (new - old)
                delta = max(delta, abs(new - old))
            a[j] = new
        if delta < tol:
            break
    return a


def pair_count_auc(scores, truths, positive):
    """AUC by exhaustive concordant/tied pair counting."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths)
    pos = scores[truths == positive]
    neg = scores[truths != positive]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (pos.size * neg.size)


def grid_logistic_mle(x, y, cap=30.0, rounds=6, width=None, grid=121):
    """Refined grid search for the box-constrained logistic MLE.

    y must be 0/1. Searches |intercept|, |slope| <= cap by repeatedly zooming
    a (grid x grid) lattice around the best cell.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    def loglik(a, b):
        z = a + b * x
        return np.sum(np.where(y == 1, -np.logaddexp(0.0, -z), -np.logaddexp(0.0, z)))

    lo_a, hi_a = -cap, cap
    lo_b, hi_b = -cap, cap
    best = (0.0, 0.0)
    for _ in range(rounds):
        avals = np.linspace(lo_a, hi_a, grid)
        bvals = np.linspace(lo_b, hi_b, grid)
        lls = np.array([[loglik(a, b) for b in bvals] for a in avals])
        ia, ib = np.unravel_index(np.argmax(lls), lls.shape)
        best = (avals[ia], bvals[ib])
        da = (hi_a - lo_a) / (grid - 1)
        db = (hi_b - lo_b) / (grid - 1)
        lo_a, hi_a = max(-cap, best[0] - 2 * da), min(cap, best[0] + 2 * da)
        lo_b, hi_b = max(-cap, best[1] - 2 * db), min(cap, best[1] + 2 * db)
    return best


def covariance_eigenvalues(matrix):
    """Eigenvalues (descending) of the sample covariance of column-samples."""
    m = np.asarray(matrix, dtype=np.float64)
    centered = m - m.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / (m.shape[1] - 1)
    return np.sort(np.linalg.eigvalsh(cov))[::-1]


def rank_genes_brute(values, labels, pre_count, final_count, score_fn, bw_fn):
    """Reference two-stage ranking: BW prefilter then score ordering."""
    d = values.shape[0]
    bw = np.array([bw_fn(values[g], labels) for g in range(d)])
    pre = sorted(range(d), key=lambda g: (-bw[g], g))[:pre_count]
    scores = {g: score_fn(values[g], labels) for g in pre}
    final = sorted(pre, key=lambda g: (-scores[g], -bw[g], g))[:final_count]
    return final
