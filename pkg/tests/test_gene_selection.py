import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from issrc import gene_selection as gs
from oracles import grid_logistic_mle, pair_count_auc, rank_genes_brute


# ---------------------------------------------------------------- bw / snr

def test_bw_hand_example():
    assert gs.bw_score([0, 1, 2, 3], [1, 1, 2, 2]) == pytest.approx(4.0)


def test_bw_perfect_separation_sentinel():
    assert gs.bw_score([0, 0, 1, 1], [1, 1, 2, 2]) == np.inf


def test_bw_constant_gene_is_zero():
    assert gs.bw_score([5, 5, 5, 5], [1, 1, 2, 2]) == 0.0


def test_bw_errors():
    with pytest.raises(ValueError):
        gs.bw_score([1, 2], [1, 1])
    with pytest.raises(ValueError):
        gs.bw_score([], [])


def test_bw_multiclass():
    v = gs.bw_score([0, 1, 5, 6, 9, 11], [1, 1, 2, 2, 3, 3])
    expr = np.array([0, 1, 5, 6, 9, 11.0])
    labels = np.array([1, 1, 2, 2, 3, 3])
    grand = expr.mean()
    between = sum((expr[labels == c].mean() - grand) ** 2 * 2 for c in (1, 2, 3))
    within = sum(((expr[labels == c] - expr[labels == c].mean()) ** 2).sum()
                 for c in (1, 2, 3))
    assert v == pytest.approx(between / within)


def test_snr_hand_example():
    assert gs.snr_score([0, 1, 2, 3], [1, 1, 2, 2]) == pytest.approx(
        2.0 / (2 * np.std([0, 1], ddof=1)))


def test_snr_sentinels():
    assert gs.snr_score([0, 0, 2, 2], [1, 1, 2, 2]) == np.inf
    assert gs.snr_score([1, 2, 1, 2], [1, 1, 2, 2]) == 0.0


def test_snr_single_class_error():
    with pytest.raises(ValueError):
        gs.snr_score([1, 2], [1, 1])


# ---------------------------------------------------------------- auc

def test_auc_perfect_and_reversed():
    raw, folded = gs.auc_score([1, 2, 3, 4], [1, 1, 2, 2])
    assert raw == 1.0 and folded == 1.0
    raw, folded = gs.auc_score([4, 3, 2, 1], [1, 1, 2, 2])
    assert raw == 0.0 and folded == 1.0


def test_auc_tie_example():
    raw, _ = gs.auc_score([1, 2, 2, 3], [1, 1, 2, 2])
    assert raw == pytest.approx(0.875)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 25), st.integers(2, 25), st.integers(0, 10_000))
def test_auc_matches_pair_counting(n_pos, n_neg, seed):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 8, n_pos + n_neg).astype(float)  # force ties
    labels = np.array([2] * n_pos + [1] * n_neg)
    raw, _ = gs.auc_score(scores, labels, positive=2)
    assert raw == pytest.approx(pair_count_auc(scores, labels, 2), abs=1e-12)


# ---------------------------------------------------------------- risk model

def test_risk_model_symmetric_data():
    expr = np.array([1.0, 2.0, 1.0, 2.0])
    model = gs.fit_risk_model(expr, np.array([1, 1, 2, 2]))
    risks = model.predict_risk(expr)
    assert abs(model.slope) < 1e-6
    assert np.allclose(risks, 0.5, atol=1e-6)


def test_risk_model_separable_capped_and_monotone():
    expr = np.array([0.0, 1.0, 2.0, 3.0])
    model = gs.fit_risk_model(expr, np.array([1, 1, 2, 2]))
    assert model.capped
    risks = model.predict_risk(np.sort(expr))
    assert np.all(np.diff(risks) >= 0)


def test_risk_model_matches_grid_oracle():
    expr = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    model = gs.fit_risk_model(expr, np.array([1, 1, 2, 2]))
    a_star, b_star = grid_logistic_mle(expr, y)
    assert model.intercept == pytest.approx(a_star, abs=1e-3)
    assert model.slope == pytest.approx(b_star, abs=1e-3)


def test_risk_model_matches_grid_oracle_nonseparable():
    expr = np.array([0.0, 2.0, 1.0, 3.0, 0.5, 2.5])
    labels = np.array([1, 1, 2, 2, 2, 1])
    y = (labels == 2).astype(float)
    model = gs.fit_risk_model(expr, labels)
    a_star, b_star = grid_logistic_mle(expr, y)
    assert model.intercept == pytest.approx(a_star, abs=1e-3)
    assert model.slope == pytest.approx(b_star, abs=1e-3)
    assert not model.capped


# ---------------------------------------------------------------- net benefit

def test_net_benefit_examples():
    assert gs.net_benefit(5, 2, 10, 0.5) == pytest.approx(0.3)
    assert gs.net_benefit(4, 0, 10, 0.123) == pytest.approx(0.4)
    assert gs.net_benefit(0, 0, 10, 0.3) == 0.0


def test_net_benefit_validation():
    with pytest.raises(ValueError):
        gs.net_benefit(1, 1, 10, 0.0)
    with pytest.raises(ValueError):
        gs.net_benefit(1, 1, 10, 1.0)
    with pytest.raises(ValueError):
        gs.net_benefit(8, 8, 10, 0.5)


# ---------------------------------------------------------------- dca / dif

def _labels40():
    # prevalence 0.4 with positive class = 2
    return np.array([2] * 4 + [1] * 6)


def test_dca_constant_risk_collapses_to_treat_all():
    labels = _labels40()
    model = gs.RiskModel(intercept=np.log(0.4 / 0.6), slope=0.0)
    curve = gs.dca_curve(model, np.zeros(10), labels, grid_step=0.005)
    below = curve.thresholds <= 0.4
    assert np.allclose(curve.nb_model[below], curve.nb_treat_all[below])
    assert np.all(curve.nb_model[~below] == 0.0)
    assert gs.dif_score(curve) == 0.0


def test_dca_perfect_risk_gene():
    labels = _labels40()
    expr = np.where(labels == 2, 10.0, -10.0)
    model = gs.fit_risk_model(expr, labels)
    curve = gs.dca_curve(model, expr, labels, grid_step=0.005)
    assert curve.p1 == curve.thresholds[-1]
    assert gs.dif_score(curve) == pytest.approx(0.4, abs=0.005)
    assert np.all(curve.nb_treat_none == 0.0)
    assert curve.prevalence == pytest.approx(0.4)


def test_dca_treat_all_zero_at_prevalence():
    labels = _labels40()
    model = gs.RiskModel(0.0, 1.0)
    curve = gs.dca_curve(model, np.linspace(-2, 2, 10), labels)
    i = int(np.argmin(np.abs(curve.thresholds - curve.prevalence)))
    assert abs(curve.nb_treat_all[i]) <= 0.02  # within one grid step of 0


def test_dif_bounded_by_prevalence():
    rng = np.random.default_rng(4)
    for _ in range(25):
        n = int(rng.integers(6, 40))
        labels = np.where(rng.random(n) < 0.5, 2, 1)
        if np.unique(labels).size < 2:
            continue
        expr = rng.standard_normal(n) * rng.uniform(0.5, 20)
        model = gs.fit_risk_model(expr, labels)
        curve = gs.dca_curve(model, expr, labels)
        dif = gs.dif_score(curve)
        assert 0.0 <= dif <= curve.prevalence + 1e-12


def test_dif_grid_step_validation():
    model = gs.RiskModel(0.0, 1.0)
    with pytest.raises(ValueError):
        gs.dca_curve(model, np.zeros(4), np.array([1, 1, 2, 2]), grid_step=0.2)


def test_risk_ranking_invariant_under_monotone_transform():
    rng = np.random.default_rng(11)
    for _ in range(15):
        n = int(rng.integers(8, 30))
        expr = rng.standard_normal(n) * rng.uniform(0.5, 3)
        labels = np.where(rng.random(n) < 1 / (1 + np.exp(-expr)), 2, 1)
        if np.unique(labels).size < 2:
            continue
        transformed = np.exp(expr / 2.0) + 0.1 * expr
        m1 = gs.fit_risk_model(expr, labels)
        m2 = gs.fit_risk_model(transformed, labels)
        r1 = m1.predict_risk(expr)
        r2 = m2.predict_risk(transformed)
        # pairwise monotone compatibility (sigmoid saturation may introduce
        # exact float ties on one side, so strict orders cannot be compared)
        for i in range(n):
            for j in range(n):
                if r1[i] < r1[j]:
                    assert r2[i] <= r2[j]
                if r2[i] < r2[j]:
                    assert r1[i] <= r1[j]


def test_dif_invariant_on_separable_gene():
    # separable data: max net benefit sits at FP=0 and equals TP/n, which
    # only depends on the risk ranking, so DIF survives monotone transforms
    labels = np.array([1, 1, 1, 2, 2, 2, 1, 2])
    expr = np.array([0.1, 0.5, 0.9, 2.0, 2.5, 3.0, 0.3, 2.2])
    f = lambda x: np.log1p(x) * 3.0 + x ** 2
    m1 = gs.fit_risk_model(expr, labels)
    m2 = gs.fit_risk_model(f(expr), labels)
    d1 = gs.dif_score(gs.dca_curve(m1, expr, labels))
    d2 = gs.dif_score(gs.dca_curve(m2, f(expr), labels))
    assert d1 == pytest.approx(d2, abs=1e-12)
    assert d1 == pytest.approx(0.5)


# ---------------------------------------------------------------- selection

def _selection_fixture(d=12, n=30, seed=5):
    rng = np.random.default_rng(seed)
    values = rng.uniform(0, 1, (d, n))
    labels = np.where(rng.random(n) < 0.5, 2, 1)
    labels[:4] = [1, 1, 2, 2]  # both classes guaranteed
    values[0, labels == 2] += 1.2
    values[3, labels == 2] -= 0.9
    return values, labels


def test_select_genes_defaults_shape_and_order():
    values, labels = _selection_fixture()
    table, chosen = gs.select_genes(values, labels, pre_count=12, final_count=5)
    assert chosen.size == 5
    difs = table.dif[chosen]
    assert np.all(np.diff(difs) <= 1e-15)  # descending
    assert np.all(table.selected[chosen])
    assert table.dca  # curves retained for prescreened genes


def test_select_genes_no_filtering():
    values, labels = _selection_fixture()
    table, chosen = gs.select_genes(values, labels, pre_count=12, final_count=12)
    assert sorted(chosen.tolist()) == list(range(12))


def test_select_genes_matches_brute_force():
    values, labels = _selection_fixture(d=5, n=24, seed=9)

    def dif_of(expr, lab):
        model = gs.fit_risk_model(expr, lab)
        return gs.dif_score(gs.dca_curve(model, expr, lab))

    expected = rank_genes_brute(values, labels, 3, 2, dif_of, gs.bw_score)
    _, chosen = gs.select_genes(values, labels, pre_count=3, final_count=2)
    assert chosen.tolist() == expected


def test_select_genes_validation():
    values, labels = _selection_fixture()
    with pytest.raises(ValueError):
        gs.select_genes(values, labels, pre_count=12, final_count=0)
    with pytest.raises(ValueError):
        gs.select_genes(values, labels, pre_count=99, final_count=5)
    with pytest.raises(ValueError):
        gs.select_genes(values, labels, pre_count=5, final_count=9)


def test_select_genes_deterministic_and_threaded():
    values, labels = _selection_fixture(seed=13)
    t1, c1 = gs.select_genes(values, labels, pre_count=10, final_count=4)
    t2, c2 = gs.select_genes(values, labels, pre_count=10, final_count=4, threads=4)
    assert np.array_equal(c1, c2)
    assert np.allclose(t1.dif, t2.dif, equal_nan=True)


def test_select_genes_multiclass_one_vs_rest():
    rng = np.random.default_rng(3)
    values = rng.uniform(0, 1, (6, 30))
    labels = np.array([1] * 10 + [2] * 10 + [3] * 10)
    values[2, labels == 3] += 2.0
    table, chosen = gs.select_genes(values, labels, pre_count=6, final_count=2)
    assert 2 in chosen.tolist()
    assert np.isfinite(table.dif[2])
