"""Metrics, curves, and the cross-validation / sweep harness.

Undefined ratios (zero denominators) are reported as None, never silently
zeroed. Scalar metrics aggregate as mean and standard deviation over folds;
confusion counts and ROC scores additionally pool across folds.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import classification, gene_selection
from .dataset import DataError, Partition
from .utils import derive_seed


@dataclass
class MetricBundle:
    accuracy: float = None
    sensitivity: float = None
    specificity: float = None
    missed_diagnosis: float = None
    misdiagnosis: float = None
    ppv: float = None
    npv: float = None
    confusion: dict = field(default_factory=dict)
    per_class: dict = None

    def as_dict(self):
        out = {k: getattr(self, k) for k in
               ("accuracy", "sensitivity", "specificity", "missed_diagnosis",
                "misdiagnosis", "ppv", "npv")}
        out["confusion"] = dict(self.confusion)
        if self.per_class is not None:
            out["per_class"] = {str(c): b.as_dict() for c, b in self.per_class.items()}
        return out


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


@dataclass
class PcaEmbedding:
    coords: np.ndarray
    components: np.ndarray
    mean: np.ndarray
    singular_values: np.ndarray


class LabelAccessLog:
    """Instrumentation hook: records which sample labels each phase touched."""

    def __init__(self):
        self.events = []

    def record(self, phase, indices):
        self.events.append((phase, tuple(int(i) for i in indices)))

    def indices_for(self, phase):
        out = set()
        for p, idx in self.events:
            if p == phase:
                out.update(idx)
        return out


def _ratio(num, den):
    return float(num) / float(den) if den > 0 else None


def confusion_metrics(predictions, truths, positive_class=None):
    """Confusion-derived metrics; multiclass adds one-vs-rest bundles."""
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    if predictions.shape != truths.shape:
        raise ValueError("prediction/truth length mismatch")
    classes = np.unique(np.concatenate([truths, predictions]))
    if classes.size > 2:
        per_class = {}
        for cl in classes:
            per_class[int(cl)] = _binary_metrics(predictions == cl, truths == cl)
        acc = float(np.mean(predictions == truths))
        return MetricBundle(accuracy=acc, per_class=per_class,
                            confusion={"correct": int(np.sum(predictions == truths)),
                                       "total": int(truths.size)})
    if positive_class is None:
        positive_class = classes[-1]
    return _binary_metrics(predictions == positive_class, truths == positive_class)


def _binary_metrics(pred_pos, true_pos):
    tp = int(np.sum(pred_pos & true_pos))
    fn = int(np.sum(~pred_pos & true_pos))
    tn = int(np.sum(~pred_pos & ~true_pos))
    fp = int(np.sum(pred_pos & ~true_pos))
    sens = _ratio(tp, tp + fn)
    spec = _ratio(tn, tn + fp)
    return MetricBundle(
        accuracy=_ratio(tp + tn, tp + tn + fp + fn),
        sensitivity=sens,
        specificity=spec,
        missed_diagnosis=None if sens is None else 1.0 - sens,
        misdiagnosis=None if spec is None else 1.0 - spec,
        ppv=_ratio(tp, tp + fp),
        npv=_ratio(tn, tn + fn),
        confusion={"tp": tp, "fn": fn, "tn": tn, "fp": fp},
    )


def roc_auc(scores, truths, positive_class=None):
    """ROC by threshold sweep over distinct scores plus trapezoidal AUC."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths)
    classes = np.unique(truths)
    if classes.size != 2:
        raise ValueError("ROC needs exactly two truth classes")
    if positive_class is None:
        positive_class = classes[-1]
    y = truths == positive_class
    P = int(y.sum())
    N = int(y.size - P)
    order = np.argsort(-scores, kind="mergesort")
    ys = y[order]
    ss = scores[order]
    tps = np.cumsum(ys)
    fps = np.cumsum(~ys)
    # keep the last point of every tied-score run
    keep = np.append(ss[1:] != ss[:-1], True)
    tpr = np.concatenate([[0.0], tps[keep] / P])
    fpr = np.concatenate([[0.0], fps[keep] / N])
    thresholds = np.concatenate([[np.inf], ss[keep]])
    auc = float(np.trapezoid(tpr, fpr))
    return RocCurve(fpr, tpr, thresholds, auc)


def err_score(er1, er2):
    """Error reduction rate (er1 - er2) / er1 * 100; None when er1 == 0."""
    for name, v in (("er1", er1), ("er2", er2)):
        if not 0.0 <= v <= 1.0:
            raise ValueError("%s must lie in [0, 1], got %r" % (name, v))
    if er1 == 0.0:
        return None
    return (er1 - er2) / er1 * 100.0


def pca_embed(matrix, components):
    """Principal-component coordinates of the sample columns.

    Mean-centered SVD projection with a deterministic sign convention: the
    largest-magnitude loading of every component is made positive.
    """
    m = np.asarray(matrix, dtype=np.float64)
    d, n = m.shape
    if n < 2:
        raise ValueError("need at least two samples")
    if components > min(d, n):
        raise ValueError("components exceed matrix dimensions")
    mean = m.mean(axis=1, keepdims=True)
    centered = m - mean
    if not np.any(centered != 0):
        raise ValueError("constant matrix has no principal components")
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    u = u[:, :components]
    s = s[:components]
    vt = vt[:components]
    for j in range(components):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            vt[j] = -vt[j]
    coords = (s[:, None] * vt).T
    return PcaEmbedding(coords, u, mean.ravel(), s)


@dataclass
class FoldResult:
    fold: int
    test_indices: np.ndarray
    predictions: np.ndarray
    truths: np.ndarray
    scores: np.ndarray
    metrics: MetricBundle
    flags: dict = field(default_factory=dict)


@dataclass
class CvResult:
    folds: list
    mean_metrics: dict
    sd_metrics: dict
    pooled_metrics: MetricBundle
    roc: RocCurve = None
    pooled_scores: np.ndarray = None
    pooled_truths: np.ndarray = None
    pooled_predictions: np.ndarray = None
    positive_class: int = None

    @property
    def mean_accuracy(self):
        return self.mean_metrics.get("accuracy")


_SCALARS = ("accuracy", "sensitivity", "specificity", "missed_diagnosis",
            "misdiagnosis", "ppv", "npv")


def _positive_score(report, positive_class, class_size_norm):
    """Risk-like score per test sample: positive-class coefficient mass share."""
    classes = list(report.classes)
    if positive_class not in classes:
        return np.zeros(report.predictions.size)
    row = classes.index(positive_class)
    score = report.scores[row].astype(np.float64)
    if report.method != "src" and class_size_norm:
        # undo the 1/s_j factor so the score is a mass fraction in [0, 1]
        sizes = report.coefficients.class_sizes if report.coefficients else None
        if sizes:
            score = score * sizes.get(int(positive_class), 1)
    if report.method == "src":
        lo, hi = score.min(), score.max()
        score = (score - lo) / (hi - lo) if hi > lo else np.full_like(score, 0.5)
    return score


def _classify(train, test, labels, cfg):
    if cfg.method == "src":
        return classification.src_classify(train, test, labels, cfg)
    return classification.integrated_isrc_classify(train, test, labels, cfg)


def cross_validate(ds, plan, cfg=None, access_log=None):
    """Per-fold pipeline runs with fold-wise metrics and pooled aggregation.

    Each fold selects genes on its training portion only, fits features
    transductively on the fold's train+test columns, classifies, and scores
    against the held-out truth. Test labels are touched only in the
    evaluation phase (recorded in access_log when given).
    """
    cfg = (cfg or classification.MethodConfig()).validate()
    positive = cfg.positive_class if cfg.positive_class is not None else ds.n_classes
    folds = []
    for f, part in enumerate(plan.folds):
        train_idx, test_idx = part.train_indices, part.test_indices
        fold_cfg = replace(cfg, seed=derive_seed(cfg.seed, 2, f))
        train = ds.values[:, train_idx]
        test = ds.values[:, test_idx]
        labels_train = ds.labels[train_idx]
        if access_log is not None:
            access_log.record("fit", train_idx)
        if np.unique(labels_train).size < 2:
            folds.append(FoldResult(f, test_idx, np.empty(0, dtype=np.int64),
                                    np.empty(0, dtype=np.int64), np.empty(0),
                                    MetricBundle(),
                                    {"single_class_training": True}))
            continue
        report = _classify(train, test, labels_train, fold_cfg)
        truths = ds.labels[test_idx]
        if access_log is not None:
            access_log.record("evaluate", test_idx)
        metrics = confusion_metrics(report.predictions, truths, positive)
        scores = _positive_score(report, positive, cfg.class_size_norm)
        flags = dict(report.flags)
        folds.append(FoldResult(f, test_idx, report.predictions, truths, scores,
                                metrics, flags))

    scored = [fr for fr in folds if "single_class_training" not in fr.flags]
    if not scored:
        raise DataError("no fold had two-class training data")
    mean_metrics, sd_metrics = {}, {}
    for key in _SCALARS:
        vals = [getattr(fr.metrics, key) for fr in scored]
        vals = [v for v in vals if v is not None]
        mean_metrics[key] = float(np.mean(vals)) if vals else None
        sd_metrics[key] = float(np.std(vals)) if vals else None

    pooled_preds = np.concatenate([fr.predictions for fr in scored])
    pooled_truths = np.concatenate([fr.truths for fr in scored])
    pooled_scores = np.concatenate([fr.scores for fr in scored])
    pooled_metrics = confusion_metrics(pooled_preds, pooled_truths, positive)
    roc = None
    if np.unique(pooled_truths).size == 2:
        roc = roc_auc(pooled_scores, pooled_truths, positive)
    return CvResult(folds, mean_metrics, sd_metrics, pooled_metrics, roc,
                    pooled_scores, pooled_truths, pooled_preds, int(positive))


def imbalance_sweep(ds, cfg=None, test_size=20, positive_counts=None, seed=0):
    """Fixed-size test sets at varying class ratios (binary datasets).

    Returns one row per ratio with accuracy, error rate, and the error
    reduction rate relative to the best ratio.
    """
    cfg = (cfg or classification.MethodConfig()).validate()
    if ds.n_classes != 2:
        raise DataError("imbalance sweep requires a binary dataset")
    positive = cfg.positive_class if cfg.positive_class is not None else ds.n_classes
    pos_idx = np.nonzero(ds.labels == positive)[0]
    neg_idx = np.nonzero(ds.labels != positive)[0]
    if positive_counts is None:
        positive_counts = list(range(test_size - 2, -1, -2))
    rows = []
    for i, n_pos in enumerate(positive_counts):
        n_neg = test_size - n_pos
        if n_pos > pos_idx.size or n_neg > neg_idx.size:
            raise DataError("not enough samples for ratio %d:%d" % (n_pos, n_neg))
        rng = np.random.default_rng(derive_seed(seed, 3, i))
        test_idx = np.concatenate([
            rng.choice(pos_idx, n_pos, replace=False),
            rng.choice(neg_idx, n_neg, replace=False)]).astype(np.int64)
        test_idx.sort()
        train_idx = np.setdiff1d(np.arange(ds.n_samples), test_idx)
        part = Partition(train_idx, test_idx)
        fold_cfg = replace(cfg, seed=derive_seed(cfg.seed, 3, i))
        report = _classify(ds.values[:, part.train_indices],
                           ds.values[:, part.test_indices],
                           ds.labels[part.train_indices], fold_cfg)
        truths = ds.labels[part.test_indices]
        acc = float(np.mean(report.predictions == truths))
        ratio = n_pos / n_neg if n_neg else float("inf")
        rows.append({"ratio": ratio, "n_positive": n_pos, "n_negative": n_neg,
                     "accuracy": acc, "error_rate": 1.0 - acc})
    best_er = min(r["error_rate"] for r in rows)
    for r in rows:
        r["err"] = err_score(r["error_rate"], best_er)
    return rows


def train_fraction_sweep(ds, cfg=None, fractions=None, seed=0,
                         methods=("integrated-issrc", "src")):
    """Accuracy of each method as the training share shrinks."""
    cfg = (cfg or classification.MethodConfig()).validate()
    if fractions is None:
        fractions = [round(0.9 - 0.1 * i, 1) for i in range(9)]
    rows = []
    for i, frac in enumerate(fractions):
        rng = np.random.default_rng(derive_seed(seed, 4, i))
        train_parts = []
        for cl in range(1, ds.n_classes + 1):
            members = np.nonzero(ds.labels == cl)[0]
            members = members[rng.permutation(members.size)]
            n_train = max(1, int(round(frac * members.size)))
            n_train = min(n_train, members.size - 1)
            train_parts.append(members[:n_train])
        train_idx = np.sort(np.concatenate(train_parts))
        test_idx = np.setdiff1d(np.arange(ds.n_samples), train_idx)
        part = Partition(train_idx, test_idx)
        for method in methods:
            run_cfg = replace(cfg, method=method, seed=derive_seed(cfg.seed, 4, i))
            report = _classify(ds.values[:, part.train_indices],
                               ds.values[:, part.test_indices],
                               ds.labels[part.train_indices], run_cfg)
            truths = ds.labels[part.test_indices]
            rows.append({"train_fraction": frac, "method": method,
                         "n_train": int(train_idx.size),
                         "accuracy": float(np.mean(report.predictions == truths))})
    return rows


def classifier_dca(scores, truths, positive_class, grid_step=0.005):
    """Decision curve of classifier scores treated as risks in [0, 1]."""
    scores = np.asarray(scores, dtype=np.float64)
    lo, hi = scores.min(), scores.max()
    if lo < 0.0 or hi > 1.0:
        scores = (scores - lo) / (hi - lo) if hi > lo else np.full_like(scores, 0.5)
    model = _FixedRisk(scores)
    labels = np.asarray(truths)
    return gene_selection.dca_curve(model, np.arange(scores.size), labels,
                                    grid_step=grid_step, positive=positive_class)


class _FixedRisk:
    """Adapter: precomputed risks indexed by sample position."""

    def __init__(self, risks):
        self.risks = np.asarray(risks, dtype=np.float64)

    def predict_risk(self, indices):
        return self.risks[np.asarray(indices, dtype=np.int64)]
