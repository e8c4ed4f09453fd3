"""Layer-wise pre-trained sparse NMF feature learning.

Each layer factorizes the previous layer's coefficient matrix under an l1
penalty on the coefficients: H is refreshed by a multiplicative rule and W by
a projected gradient step with backtracking, so the per-layer objective

    0.5 * ||V - W H||_F^2 + lambda * sum(H)

never increases. The stack is fitted transductively: test-sample columns ride
along unlabeled so the learned features reflect all available samples.
"""

from dataclasses import dataclass, field

import numpy as np

from .utils import derive_seed

DENOM_FLOOR = 1e-12
DESCENT_SLACK = 1e-12


class BacktrackingExhausted(RuntimeError):
    """Gradient step could not be shrunk into a descent step."""


@dataclass
class SnmfLayer:
    w: np.ndarray
    h: np.ndarray
    lam: float
    step: float
    objective_trace: np.ndarray
    n_train: int = None

    @property
    def rank(self):
        return self.w.shape[1]

    @property
    def h_train(self):
        return self.h[:, :self.n_train] if self.n_train is not None else self.h

    @property
    def h_test(self):
        return self.h[:, self.n_train:] if self.n_train is not None else self.h[:, :0]


@dataclass
class FactorStack:
    layers: list
    ranks: tuple
    lambdas: tuple
    seed: int
    max_iters: int
    tol: float
    n_train: int = None

    @property
    def h_train(self):
        return self.layers[-1].h_train

    @property
    def h_test(self):
        return self.layers[-1].h_test


def snmf_objective(v, w, h, lam):
    return 0.5 * np.linalg.norm(v - w @ h, "fro") ** 2 + lam * float(h.sum())


def snmf_update_h(v, w, h, lam):
    """Multiplicative coefficient refresh: h * (w'v) / (w'w h + lam).

    Denominator entries are floored at 1e-12; the result is projected to be
    nonnegative. Zero entries stay zero (multiplicative rule).
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    v, w, h = (np.asarray(a, dtype=np.float64) for a in (v, w, h))
    if w.shape[0] != v.shape[0] or w.shape[1] != h.shape[0] or h.shape[1] != v.shape[1]:
        raise ValueError("dimension mismatch: v%s, w%s, h%s" % (v.shape, w.shape, h.shape))
    num = w.T @ v
    den = np.maximum(w.T @ w @ h + lam, DENOM_FLOOR)
    return np.maximum(h * num / den, 0.0)


def snmf_update_w(v, w, h, step, return_step=False):
    """Projected gradient basis refresh with backtracking.

    Takes w - step * (w h - v) h', projects to nonnegative, and halves the
    step (at most 20 times) until the reconstruction objective does not
    increase. The l1 penalty does not depend on w, so the quadratic part
    decides acceptance.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    v, w, h = (np.asarray(a, dtype=np.float64) for a in (v, w, h))
    if w.shape[0] != v.shape[0] or w.shape[1] != h.shape[0] or h.shape[1] != v.shape[1]:
        raise ValueError("dimension mismatch: v%s, w%s, h%s" % (v.shape, w.shape, h.shape))
    grad = (w @ h - v) @ h.T
    f0 = 0.5 * np.linalg.norm(v - w @ h, "fro") ** 2
    for _ in range(21):
        w_new = np.maximum(w - step * grad, 0.0)
        f1 = 0.5 * np.linalg.norm(v - w_new @ h, "fro") ** 2
        if f1 <= f0 + DESCENT_SLACK:
            return (w_new, step) if return_step else w_new
        step *= 0.5
    raise BacktrackingExhausted(
        "no descent step found after 20 halvings (divergent configuration)")


def factorize_layer(v, rank, lam, seed, max_iters=500, tol=1e-6, step0=1e-2,
                    n_train=None):
    """Alternate coefficient/basis updates from a seeded uniform start.

    Stops when the relative objective change over a full iteration drops
    below tol or after max_iters. The recorded objective trace is
    non-increasing within 1e-12 per accepted step.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("input must be a matrix")
    if np.any(v < 0):
        raise ValueError("input must be nonnegative")
    if not np.any(v > 0):
        raise ValueError("all-zero input matrix")
    d, q = v.shape
    if not 0 < rank < min(d, q):
        raise ValueError("rank %d out of range for %dx%d input" % (rank, d, q))

    rng = np.random.default_rng(seed)
    # uniform in (0,1] (avoids zero-locked entries); h is scaled so the
    # initial reconstruction matches the input's mean, otherwise deep layers
    # start orders of magnitude off-scale and stall
    w = 1.0 - rng.random((d, rank))
    h = (1.0 - rng.random((rank, q))) * (4.0 * float(v.mean()) / rank)
    step = float(step0)
    trace = [snmf_objective(v, w, h, lam)]
    for _ in range(max_iters):
        prev_iter_obj = trace[-1]
        h_new = snmf_update_h(v, w, h, lam)
        f_h = snmf_objective(v, w, h_new, lam)
        if f_h <= trace[-1] + DESCENT_SLACK:
            h = h_new
            trace.append(f_h)
        else:
            # float-noise guard; the multiplicative rule is a descent rule
            trace.append(trace[-1])
        w, step = snmf_update_w(v, w, h, step, return_step=True)
        trace.append(snmf_objective(v, w, h, lam))
        step = min(step * 2.0, 1.0)
        if abs(trace[-1] - prev_iter_obj) <= tol * max(abs(prev_iter_obj), 1e-300):
            break
    return SnmfLayer(w, h, float(lam), step, np.array(trace), n_train)


def lpml_snmf_fit(train, test, ranks=(8, 6), lambdas=(0.2, 0.5), seed=0,
                  max_iters=500, tol=1e-6, step0=1e-2, scale_penalties=True):
    """Fit the layered stack on the column-concatenation of train and test.

    Layer 1 factorizes [train, test]; each further layer factorizes the
    previous layer's coefficient matrix. Column positions of the train/test
    split are preserved through every layer. test may be None for a
    training-only fit.

    With scale_penalties the effective l1 weight of layer l is
    lambda_l * mean(input_l), which makes the whole stack scale-equivariant:
    scaling the input by c > 0 scales every coefficient matrix by c without
    changing the sparsity structure. Disable for literal absolute weights.
    """
    train = np.asarray(train, dtype=np.float64)
    if test is None:
        test = np.empty((train.shape[0], 0))
    test = np.asarray(test, dtype=np.float64)
    if train.shape[0] != test.shape[0]:
        raise ValueError("train and test must share the row dimension")
    if len(ranks) != len(lambdas):
        raise ValueError("ranks and lambdas must have equal length")
    n_train = train.shape[1]
    v = np.concatenate([train, test], axis=1)
    q = v.shape[1]
    prev_rank = v.shape[0]
    for l, r in enumerate(ranks):
        if not (0 < r < min(prev_rank, q)):
            raise ValueError("rank %d invalid at layer %d (must be < min(%d, %d))"
                             % (r, l + 1, prev_rank, q))
        prev_rank = r

    layers = []
    current = v
    for l, (r, lam) in enumerate(zip(ranks, lambdas)):
        lam_eff = lam * float(current.mean()) if scale_penalties else lam
        layer = factorize_layer(current, r, lam_eff, derive_seed(seed, l),
                                max_iters=max_iters, tol=tol, step0=step0,
                                n_train=n_train)
        layers.append(layer)
        current = layer.h
    return FactorStack(layers, tuple(ranks), tuple(lambdas), int(seed),
                       max_iters, tol, n_train)


def emit_factor_diagnostics(stack, v, labels=None):
    """Diagnostic tables for a fitted stack.

    Returns per-layer factors, sample-sample correlation matrices of the
    input and of each layer's coefficients (constant columns flagged as
    NaN rows/cols), and per-class feature quartiles when labels are given.
    """
    out = {"factors": {}, "correlations": {}, "quartiles": {}}
    matrices = {"input": np.asarray(v, dtype=np.float64)}
    for l, layer in enumerate(stack.layers, start=1):
        out["factors"]["w_%d" % l] = layer.w
        out["factors"]["h_%d" % l] = layer.h
        matrices["h_%d" % l] = layer.h
    for name, m in matrices.items():
        out["correlations"][name] = _sample_correlation(m)
    if labels is not None:
        labels = np.asarray(labels)
        for name, m in matrices.items():
            per_class = {}
            for cl in np.unique(labels):
                block = m[:, labels == cl]
                per_class[int(cl)] = np.percentile(block, [0, 25, 50, 75, 100])
            out["quartiles"][name] = per_class
    return out


def _sample_correlation(m):
    """Correlation between sample columns; constant columns give NaN."""
    m = np.asarray(m, dtype=np.float64)
    centered = m - m.mean(axis=0, keepdims=True)
    sd = centered.std(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        normed = centered / sd
        corr = (normed.T @ normed) / m.shape[0]
    corr[:, sd == 0] = np.nan
    corr[sd == 0, :] = np.nan
    np.fill_diagonal(corr, np.where(sd == 0, np.nan, 1.0))
    return corr
