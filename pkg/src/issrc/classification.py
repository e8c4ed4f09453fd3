"""Inverse-space representation classification and the SRC baseline.

Training features are coded over the test-feature dictionary; each test
sample is then assigned to the class contributing the largest share of
absolute coefficient mass (category contribution rate, CCR). The SRC
baseline codes test samples over the training dictionary instead and picks
the class of minimal reconstruction residual. A least-squares perturbation
checker quantifies how stably the inverse-space coefficients react to small
disturbances of the target and the dictionary.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import feature_learning, gene_selection
from .sparse_solver import SolverParams, gsadmm_solve
from .utils import derive_seed


@dataclass
class MethodConfig:
    """End-to-end pipeline knobs shared by the CLI and the harness."""

    method: str = "integrated-issrc"
    skip_selection: bool = False
    skip_features: bool = False
    pre_count: int = 200
    final_count: int = 10
    grid_step: float = 0.005
    selection_score: str = "dif"
    ranks: tuple = (8, 6)
    lambdas: tuple = (0.2, 0.5)
    nmf_max_iters: int = 500
    nmf_tol: float = 1e-6
    solver: SolverParams = field(default_factory=SolverParams)
    seed: int = 0
    class_size_norm: bool = True
    scale_before_features: bool = True
    positive_class: int = None
    threads: int = 1

    def validate(self):
        problems = []
        if self.method not in ("integrated-issrc", "issrc", "src"):
            problems.append("method must be integrated-issrc, issrc or src")
        if self.pre_count < 1:
            problems.append("pre_count must be >= 1")
        if self.final_count < 1:
            problems.append("final_count must be >= 1")
        if self.final_count > self.pre_count:
            problems.append("final_count must be <= pre_count")
        if not (0.0 < self.grid_step <= 0.1):
            problems.append("grid_step must lie in (0, 0.1]")
        if self.selection_score not in ("dif", "bw", "snr", "auc"):
            problems.append("selection_score must be dif, bw, snr or auc")
        if len(self.ranks) != len(self.lambdas):
            problems.append("ranks and lambdas must have equal length")
        if any(r < 1 for r in self.ranks):
            problems.append("ranks must be positive")
        if any(l < 0 for l in self.lambdas):
            problems.append("lambdas must be >= 0")
        if self.nmf_max_iters < 1:
            problems.append("nmf_max_iters must be >= 1")
        if self.threads < 1:
            problems.append("threads must be >= 1")
        try:
            self.solver.validate()
        except ValueError as exc:
            problems.append(str(exc))
        if problems:
            raise ValueError("; ".join(problems))
        return self


@dataclass
class CoefficientMatrix:
    """Columns are inverse-space coefficient vectors, one per training sample."""

    values: np.ndarray
    class_of: np.ndarray
    class_sizes: dict
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.class_of = np.asarray(self.class_of, dtype=np.int64)
        if self.values.shape[1] != self.class_of.size:
            raise ValueError("one coefficient column per training sample required")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("coefficient matrix contains non-finite entries")


@dataclass
class CcrMatrix:
    values: np.ndarray
    classes: np.ndarray


@dataclass
class ClassificationReport:
    predictions: np.ndarray
    classes: np.ndarray
    ccr: np.ndarray = None
    scores: np.ndarray = None
    coefficients: CoefficientMatrix = None
    flags: dict = field(default_factory=dict)
    method: str = ""
    extras: dict = field(default_factory=dict)


@dataclass
class StabilityReport:
    epsilon: float
    observed_ratio: float
    bound: float
    kappa: float
    theta: float
    holds: bool


def issr_represent(train_features, test_features, params=None, class_of=None,
                   threads=1):
    """Code every training feature over the test-feature dictionary.

    Column i of the result is the sparse coefficient vector of training
    sample i. All-zero training columns are flagged and coded as zero
    without running the solver.
    """
    X = np.asarray(train_features, dtype=np.float64)
    Y = np.asarray(test_features, dtype=np.float64)
    if X.shape[0] != Y.shape[0]:
        raise ValueError("train and test features must share the row dimension")
    if Y.shape[1] < 1:
        raise ValueError("need at least one test sample")
    params = params or SolverParams()
    s_c = X.shape[1]

    def solve_col(i):
        col = X[:, i]
        if not np.any(col != 0):
            return np.zeros(Y.shape[1]), "zero_column"
        alpha, state = gsadmm_solve(col, Y, params)
        return alpha, state.flags.get("warning")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(solve_col, range(s_c)))
    else:
        results = [solve_col(i) for i in range(s_c)]

    values = np.column_stack([r[0] for r in results])
    flags = {}
    for i, (_, warn) in enumerate(results):
        if warn:
            flags.setdefault(warn, []).append(i)
    if class_of is None:
        class_of = np.ones(s_c, dtype=np.int64)
    class_of = np.asarray(class_of, dtype=np.int64)
    sizes = {int(c): int(np.sum(class_of == c)) for c in np.unique(class_of)}
    return CoefficientMatrix(values, class_of, sizes, flags)


def ccr_classify(coeffs, class_size_norm=True, train_features=None,
                 test_features=None):
    """Category contribution rates and argmax predictions per test sample.

    C[j, l] = (1/s_j) * sum_{i in class j} |a_{i,l}| / sum_i |a_{i,l}|.
    Ties go to the smaller class index and are flagged. Test columns whose
    coefficient mass is zero fall back to the nearest training feature when
    feature matrices are supplied, else to the smallest class index.
    """
    classes = np.unique(coeffs.class_of)
    if any(coeffs.class_sizes.get(int(c), 0) == 0 for c in classes):
        raise ValueError("every class needs at least one training sample")
    absval = np.abs(coeffs.values)
    k = absval.shape[0]
    totals = absval.sum(axis=1)
    ccr = np.zeros((classes.size, k))
    for row, cl in enumerate(classes):
        mass = absval[:, coeffs.class_of == cl].sum(axis=1)
        denom = np.where(totals > 0, totals, 1.0)
        share = mass / denom
        ccr[row] = share / coeffs.class_sizes[int(cl)] if class_size_norm else share

    predictions = np.empty(k, dtype=np.int64)
    flags = {"degenerate_columns": [], "ties": []}
    for l in range(k):
        if totals[l] == 0.0:
            flags["degenerate_columns"].append(l)
            if train_features is not None and test_features is not None:
                dists = np.linalg.norm(train_features - test_features[:, [l]], axis=0)
                predictions[l] = coeffs.class_of[int(np.argmin(dists))]
            else:
                predictions[l] = int(classes[0])
            continue
        col = ccr[:, l]
        best = int(np.argmax(col))
        if np.sum(col == col[best]) > 1:
            flags["ties"].append(l)
        predictions[l] = int(classes[best])
    flags = {k2: v for k2, v in flags.items() if v}
    return CcrMatrix(ccr, classes), predictions, flags


def _select_rows(train, test, labels, cfg):
    d = train.shape[0]
    pre = min(cfg.pre_count, d)
    fin = min(cfg.final_count, pre)
    table, chosen = gene_selection.select_genes(
        train, labels, pre_count=pre, final_count=fin, grid_step=cfg.grid_step,
        positive=cfg.positive_class, final_score=cfg.selection_score,
        threads=cfg.threads)
    return train[chosen], test[chosen], table, chosen


def _shift_rows_nonnegative(train, test):
    joint_min = np.minimum(train.min(axis=1), test.min(axis=1) if test.size else np.inf)
    shifts = np.where(joint_min < 0, -joint_min, 0.0)
    return train + shifts[:, None], test + shifts[:, None] if test.size else test


def integrated_isrc_classify(train, test, labels, cfg=None):
    """Full chain: gene selection, layered feature learning, inverse coding.

    Either stage can be skipped (ablations); with feature learning disabled
    the inverse representation runs on the selected raw rows directly.
    """
    cfg = (cfg or MethodConfig()).validate()
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if train.shape[1] != labels.size:
        raise ValueError("one label per training column required")
    extras = {}

    if cfg.skip_selection or cfg.method == "issrc":
        train_sel, test_sel = train, test
    else:
        train_sel, test_sel, table, chosen = _select_rows(train, test, labels, cfg)
        extras["gene_table"] = table
        extras["selected_genes"] = chosen

    if cfg.skip_features or cfg.method == "issrc":
        feats_train, feats_test = train_sel, test_sel
    else:
        a, b = _shift_rows_nonnegative(train_sel, test_sel)
        if cfg.scale_before_features:
            # unit-max scaling keeps the gradient step of the basis update
            # inside its backtracking budget; predictions are scale-free
            peak = max(a.max(initial=0.0), b.max(initial=0.0))
            if peak > 0:
                a, b = a / peak, b / peak
        stack = feature_learning.lpml_snmf_fit(
            a, b, ranks=cfg.ranks, lambdas=cfg.lambdas,
            seed=derive_seed(cfg.seed, 1), max_iters=cfg.nmf_max_iters,
            tol=cfg.nmf_tol)
        feats_train, feats_test = stack.h_train, stack.h_test
        extras["factor_stack"] = stack

    coeffs = issr_represent(feats_train, feats_test, cfg.solver,
                            class_of=labels, threads=cfg.threads)
    ccr, predictions, flags = ccr_classify(
        coeffs, class_size_norm=cfg.class_size_norm,
        train_features=feats_train, test_features=feats_test)
    return ClassificationReport(predictions=predictions, classes=ccr.classes,
                                ccr=ccr.values, scores=ccr.values,
                                coefficients=coeffs, flags=flags,
                                method=cfg.method, extras=extras)


def src_classify(train, test, labels, cfg=None):
    """SRC baseline: code each test sample over the training dictionary.

    Honors the same selection / feature-learning stages so the comparison
    isolates the representation direction. Prediction minimizes the
    class-restricted reconstruction residual; scores are negated residuals.
    """
    cfg = (cfg or MethodConfig()).validate()
    cfg = replace(cfg, method="src") if cfg.method != "src" else cfg
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    extras = {}

    if cfg.skip_selection:
        train_sel, test_sel = train, test
    else:
        train_sel, test_sel, table, chosen = _select_rows(train, test, labels, cfg)
        extras["gene_table"] = table
        extras["selected_genes"] = chosen

    if cfg.skip_features:
        feats_train, feats_test = train_sel, test_sel
    else:
        a, b = _shift_rows_nonnegative(train_sel, test_sel)
        if cfg.scale_before_features:
            peak = max(a.max(initial=0.0), b.max(initial=0.0))
            if peak > 0:
                a, b = a / peak, b / peak
        stack = feature_learning.lpml_snmf_fit(
            a, b, ranks=cfg.ranks, lambdas=cfg.lambdas,
            seed=derive_seed(cfg.seed, 1), max_iters=cfg.nmf_max_iters,
            tol=cfg.nmf_tol)
        feats_train, feats_test = stack.h_train, stack.h_test
        extras["factor_stack"] = stack

    classes = np.unique(labels)
    k = feats_test.shape[1]
    residuals = np.zeros((classes.size, k))
    for l in range(k):
        y = feats_test[:, l]
        if not np.any(y != 0):
            residuals[:, l] = np.linalg.norm(y)
            continue
        alpha, _ = gsadmm_solve(y, feats_train, cfg.solver)
        for row, cl in enumerate(classes):
            mask = labels == cl
            residuals[row, l] = np.linalg.norm(y - feats_train[:, mask] @ alpha[mask])
    predictions = np.array([int(classes[int(np.argmin(residuals[:, l]))]) for l in range(k)],
                           dtype=np.int64)
    return ClassificationReport(predictions=predictions, classes=classes,
                                scores=-residuals, flags={}, method="src",
                                extras=extras)


def stability_check(dictionary, target, epsilon, trials, seed=0, slack=0.1):
    """Monte-Carlo check of the least-squares perturbation bound.

    Perturbs target and dictionary by relative size epsilon and compares the
    observed relative coefficient change against
    epsilon * (2*kappa/cos(theta) + tan(theta)*kappa^2), with multiplicative
    slack absorbing the second-order remainder. epsilon must not exceed the
    smallest-to-largest singular value ratio of the dictionary.
    """
    D = np.asarray(dictionary, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64).ravel()
    r, k = D.shape
    if r < k:
        raise ValueError("need at least as many rows as columns")
    svals = np.linalg.svd(D, compute_uv=False)
    if svals[-1] <= 1e-12 * svals[0]:
        raise ValueError("dictionary is rank deficient")
    eps_max = svals[-1] / svals[0]
    if epsilon > eps_max:
        raise ValueError("epsilon %.3g violates the hypothesis bound %.3g" % (epsilon, eps_max))

    kappa = float(svals[0] / svals[-1])
    alpha_ls, *_ = np.linalg.lstsq(D, t, rcond=None)
    resid = float(np.linalg.norm(D @ alpha_ls - t))
    sin_theta = resid / float(np.linalg.norm(t))
    if sin_theta >= 1.0:
        raise ValueError("target is orthogonal to the dictionary span")
    theta = float(np.arcsin(min(sin_theta, 1.0)))
    bound = epsilon * (2.0 * kappa / np.cos(theta) + np.tan(theta) * kappa ** 2)

    rng = np.random.default_rng(seed)
    base_norm = float(np.linalg.norm(alpha_ls))
    reports = []
    for _ in range(int(trials)):
        if epsilon == 0.0:
            observed = 0.0
        else:
            dt = rng.standard_normal(t.shape)
            dD = rng.standard_normal(D.shape)
            dt *= epsilon * np.linalg.norm(t) / np.linalg.norm(dt)
            dD *= epsilon * np.linalg.norm(D, 2) / np.linalg.norm(dD, 2)
            alpha_j, *_ = np.linalg.lstsq(D + dD, t + dt, rcond=None)
            observed = float(np.linalg.norm(alpha_j - alpha_ls) / base_norm)
        reports.append(StabilityReport(epsilon=float(epsilon), observed_ratio=observed,
                                       bound=float(bound), kappa=kappa, theta=theta,
                                       holds=observed <= bound * (1.0 + slack)))
    return reports
