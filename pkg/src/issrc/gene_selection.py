"""Gene scoring and selection.

Scores: BW (between/within sum-of-squares ratio), SNR, rank-based AUC, and a
decision-information factor (DIF) computed from a per-gene decision curve.
The DIF of a gene is the maximum clinical net benefit of its univariate risk
model over the valid threshold interval; genes are pre-filtered by BW and the
final subset is ranked by DIF.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RiskModel:
    """Univariate logistic risk model for one gene."""

    intercept: float
    slope: float
    gene_index: int = -1
    capped: bool = False

    def predict_risk(self, expr):
        z = self.intercept + self.slope * np.asarray(expr, dtype=np.float64)
        return 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))


@dataclass
class DcaCurve:
    """Decision curve of one risk model: model net benefit vs threshold.

    nb_treat_none is identically zero; nb_treat_all crosses zero at the
    prevalence; p1 bounds the valid threshold interval [prevalence, p1].
    """

    thresholds: np.ndarray
    nb_model: np.ndarray
    nb_treat_all: np.ndarray
    nb_treat_none: np.ndarray
    prevalence: float
    p1: float


@dataclass
class GeneScoreTable:
    gene_index: np.ndarray
    bw: np.ndarray
    snr: np.ndarray
    auc: np.ndarray
    dif: np.ndarray
    prescreened: np.ndarray
    selected: np.ndarray
    dca: dict = field(default_factory=dict)
    gene_ids: list = None

    def rows(self):
        out = []
        for i in range(self.gene_index.size):
            gid = self.gene_ids[i] if self.gene_ids else str(int(self.gene_index[i]))
            out.append((gid, self.bw[i], self.snr[i], self.auc[i], self.dif[i],
                        bool(self.selected[i])))
        return out


def _check_classes(labels):
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if labels.size == 0:
        raise ValueError("empty expression vector")
    if classes.size < 2:
        raise ValueError("need at least two classes, got %s" % classes.tolist())
    return classes


def bw_score(expr, labels):
    """Ratio of between-class to within-class sum of squares.

    Returns +inf when classes separate exactly (zero within-class scatter
    with nonzero between-class scatter) and 0 for a constant gene.
    """
    expr = np.asarray(expr, dtype=np.float64)
    classes = _check_classes(labels)
    if expr.shape != np.asarray(labels).shape:
        raise ValueError("expression/label length mismatch")
    grand = expr.mean()
    between = 0.0
    within = 0.0
    for cl in classes:
        vals = expr[np.asarray(labels) == cl]
        mu = vals.mean()
        between += vals.size * (mu - grand) ** 2
        within += np.sum((vals - mu) ** 2)
    if within == 0.0:
        return np.inf if between > 0 else 0.0
    return float(between / within)


def snr_score(expr, labels):
    """|mu1 - mu2| / (s1 + s2) with sample standard deviations."""
    expr = np.asarray(expr, dtype=np.float64)
    classes = _check_classes(labels)
    if classes.size != 2:
        raise ValueError("snr_score requires binary labels")
    a = expr[np.asarray(labels) == classes[0]]
    b = expr[np.asarray(labels) == classes[1]]
    sa = a.std(ddof=1) if a.size > 1 else 0.0
    sb = b.std(ddof=1) if b.size > 1 else 0.0
    num = abs(a.mean() - b.mean())
    if sa + sb == 0.0:
        return np.inf if num > 0 else 0.0
    return float(num / (sa + sb))


def auc_score(expr, labels, positive=None):
    """Mann-Whitney AUC of expr for the positive class; ties count half.

    Returns (raw, folded) where folded = max(raw, 1 - raw) is the
    orientation-free value used for ranking.
    """
    expr = np.asarray(expr, dtype=np.float64)
    labels = np.asarray(labels)
    classes = _check_classes(labels)
    if classes.size != 2:
        raise ValueError("auc_score requires binary labels")
    if positive is None:
        positive = classes[-1]
    pos = expr[labels == positive]
    neg = expr[labels != positive]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both classes must be nonempty")
    # rank-sum with midranks for ties
    allv = np.concatenate([pos, neg])
    order = np.argsort(allv, kind="mergesort")
    ranks = np.empty(allv.size)
    sv = allv[order]
    i = 0
    while i < sv.size:
        j = i
        while j + 1 < sv.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_pos = ranks[:pos.size].sum()
    raw = (rank_pos - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size)
    return float(raw), float(max(raw, 1.0 - raw))


def _loglik(x, y, intercept, slope):
    z = intercept + slope * x
    # stable log(sigmoid): -log(1+exp(-z)) for y=1, -log(1+exp(z)) for y=0
    return float(np.sum(np.where(y == 1, -np.logaddexp(0.0, -z), -np.logaddexp(0.0, z))))


def fit_risk_model(expr, labels, positive=None, gene_index=-1, cap=30.0,
                   max_iters=50, tol=1e-8):
    """Univariate logistic fit by iteratively reweighted least squares.

    For separable data the unconstrained likelihood has no maximizer; the fit
    then switches to projected gradient ascent on the box |coef| <= cap and
    the result is flagged as capped.
    """
    expr = np.asarray(expr, dtype=np.float64)
    labels = np.asarray(labels)
    classes = _check_classes(labels)
    if classes.size != 2:
        raise ValueError("risk model requires binary labels")
    if positive is None:
        positive = classes[-1]
    y = (labels == positive).astype(np.float64)

    a, b = float(np.log(max(y.mean(), 1e-12) / max(1 - y.mean(), 1e-12))), 0.0
    X = np.column_stack([np.ones_like(expr), expr])
    converged = False
    for _ in range(max_iters):
        p = 1.0 / (1.0 + np.exp(-np.clip(a + b * expr, -700, 700)))
        grad = X.T @ (y - p)
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        w = np.maximum(p * (1 - p), 1e-12)
        hess = (X * w[:, None]).T @ X
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        # halve the Newton step until the log-likelihood does not decrease
        t, f0 = 1.0, _loglik(expr, y, a, b)
        a2, b2 = a + step[0], b + step[1]
        for _ in range(30):
            if _loglik(expr, y, a2, b2) >= f0:
                break
            t *= 0.5
            a2, b2 = a + t * step[0], b + t * step[1]
        a, b = float(a2), float(b2)
        if max(abs(a), abs(b)) > cap:
            break

    if converged and max(abs(a), abs(b)) <= cap:
        return RiskModel(a, b, gene_index, capped=False)

    # separable or capped regime: box-constrained maximizer
    a = float(np.clip(a, -cap, cap))
    b = float(np.clip(b, -cap, cap))
    step = 1.0
    for _ in range(20000):
        p = 1.0 / (1.0 + np.exp(-np.clip(a + b * expr, -700, 700)))
        ga, gb = float(np.sum(y - p)), float(np.sum((y - p) * expr))
        f0 = _loglik(expr, y, a, b)
        a2, b2 = a, b
        while step > 1e-16:
            a2 = float(np.clip(a + step * ga, -cap, cap))
            b2 = float(np.clip(b + step * gb, -cap, cap))
            if _loglik(expr, y, a2, b2) >= f0:
                break
            step *= 0.5
        if abs(a2 - a) < 1e-13 and abs(b2 - b) < 1e-13:
            a, b = a2, b2
            break
        a, b = a2, b2
        step = min(step * 2.0, 1e3)
    capped = max(abs(a), abs(b)) >= cap - 1e-9
    return RiskModel(a, b, gene_index, capped=capped)


def net_benefit(tp, fp, n, p_t):
    """Clinical net benefit TP/n - (FP/n) * p_t/(1-p_t)."""
    if not (0.0 < p_t < 1.0):
        raise ValueError("p_t must lie in (0,1), got %r" % p_t)
    if n <= 0:
        raise ValueError("n must be positive")
    if tp + fp > n:
        raise ValueError("tp + fp exceeds n")
    return tp / n - (fp / n) * (p_t / (1.0 - p_t))


def dca_curve(model, expr, labels, grid_step=0.005, positive=None):
    """Decision curve of a risk model on a threshold grid.

    A sample counts as predicted-positive at threshold p_t when its modeled
    risk is >= p_t. p1 is the largest grid threshold >= prevalence at which
    the model curve crosses from nonnegative to negative, else the grid max.
    """
    if not (0.0 < grid_step <= 0.1):
        raise ValueError("grid_step must lie in (0, 0.1]")
    labels = np.asarray(labels)
    classes = _check_classes(labels)
    if classes.size != 2:
        raise ValueError("dca_curve requires binary labels")
    if positive is None:
        positive = classes[-1]
    y = labels == positive
    n = y.size
    P = int(y.sum())
    if P == 0 or P == n:
        raise ValueError("degenerate labels: one class is empty")
    prevalence = P / n

    risks = model.predict_risk(expr)
    n_points = int(round((1.0 - 2.0 * grid_step) / grid_step)) + 1
    thresholds = np.linspace(grid_step, 1.0 - grid_step, n_points)
    odds = thresholds / (1.0 - thresholds)
    pred = risks[:, None] >= thresholds[None, :]
    tp = np.sum(pred & y[:, None], axis=0)
    fp = np.sum(pred & ~y[:, None], axis=0)
    nb_model = tp / n - (fp / n) * odds
    nb_all = P / n - ((n - P) / n) * odds

    p1 = float(thresholds[-1])
    for i in range(thresholds.size - 1, 0, -1):
        if thresholds[i] >= prevalence and nb_model[i] < 0.0 and nb_model[i - 1] >= 0.0:
            p1 = float(thresholds[i])
            break
    return DcaCurve(thresholds, nb_model, nb_all, np.zeros_like(thresholds),
                    float(prevalence), p1)


def dif_score(curve):
    """Maximum model net benefit over [prevalence, p1], clamped at 0."""
    mask = (curve.thresholds >= curve.prevalence - 1e-12) & (curve.thresholds <= curve.p1 + 1e-12)
    if not mask.any():
        return 0.0
    return float(max(0.0, curve.nb_model[mask].max()))


def _binary_problems(labels, positive):
    """(positive_class, labels) reductions: identity for binary, else one-vs-rest."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size == 2:
        return [(positive if positive is not None else classes[-1], labels)]
    return [(1, np.where(labels == cl, 1, 0)) for cl in classes]


def _gene_scores(expr, labels, grid_step, positive):
    """SNR / folded AUC / DIF for one gene; multiclass takes the best one-vs-rest."""
    snr = auc = dif = np.nan
    curve = None
    for pos, lab in _binary_problems(labels, positive):
        s = snr_score(expr, lab)
        _, folded = auc_score(expr, lab, positive=pos)
        if np.isnan(snr) or s > snr:
            snr = s
        if np.isnan(auc) or folded > auc:
            auc = folded
        model = fit_risk_model(expr, lab, positive=pos)
        c = dca_curve(model, expr, lab, grid_step, positive=pos)
        d = dif_score(c)
        if np.isnan(dif) or d > dif:
            dif, curve = d, c
    return snr, auc, dif, curve


def select_genes(values, labels, pre_count=200, final_count=10, grid_step=0.005,
                 positive=None, final_score="dif", threads=1, gene_ids=None):
    """Rank genes and select the information subset.

    BW scores all genes; the top pre_count proceed to DIF scoring via
    per-gene risk models and decision curves; the top final_count by DIF are
    selected (descending), ties broken by BW then by gene index. final_score
    may swap DIF for snr/auc/bw to reproduce baseline selections.
    """
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels)
    d = values.shape[0]
    if final_count <= 0:
        raise ValueError("final_count must be positive")
    if pre_count > d:
        raise ValueError("pre_count %d exceeds gene count %d" % (pre_count, d))
    if final_count > pre_count:
        raise ValueError("final_count exceeds pre_count")
    if final_score not in ("dif", "bw", "snr", "auc"):
        raise ValueError("unknown final_score %r" % final_score)

    bw = np.array([bw_score(values[g], labels) for g in range(d)])
    # BW ranking: descending score, index ascending on ties (inf sorts first)
    order = np.lexsort((np.arange(d), -bw))
    pre_idx = np.sort(order[:pre_count])

    snr = np.full(d, np.nan)
    auc = np.full(d, np.nan)
    dif = np.full(d, np.nan)
    dca = {}

    def score_one(g):
        return _gene_scores(values[g], labels, grid_step, positive)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(score_one, pre_idx))
    else:
        results = [score_one(g) for g in pre_idx]
    for g, (s, a, f, curve) in zip(pre_idx, results):
        snr[g], auc[g], dif[g] = s, a, f
        if curve is not None:
            dca[int(g)] = curve

    score = {"dif": dif, "bw": bw, "snr": snr, "auc": auc}[final_score]
    pre_score = score[pre_idx]
    pre_bw = bw[pre_idx]
    # descending final score, then descending BW, then ascending gene index
    sel_order = np.lexsort((pre_idx, -np.nan_to_num(pre_bw, posinf=np.finfo(float).max),
                            -np.nan_to_num(pre_score, posinf=np.finfo(float).max)))
    chosen = pre_idx[sel_order[:final_count]]

    prescreened = np.zeros(d, dtype=bool)
    prescreened[pre_idx] = True
    selected = np.zeros(d, dtype=bool)
    selected[chosen] = True
    table = GeneScoreTable(np.arange(d), bw, snr, auc, dif, prescreened, selected,
                           dca, list(gene_ids) if gene_ids is not None else None)
    return table, np.array(chosen, dtype=np.int64)
