"""Inverse-space sparse representation classification toolkit."""

__version__ = "0.1.0"

from .dataset import (ExpressionDataset, FoldPlan, Partition, load_matrix,
                      save_matrix, shift_nonnegative, stratified_kfold)
from .gene_selection import (DcaCurve, GeneScoreTable, RiskModel, auc_score,
                             bw_score, dca_curve, dif_score, fit_risk_model,
                             net_benefit, select_genes, snr_score)
from .feature_learning import (FactorStack, SnmfLayer, emit_factor_diagnostics,
                               factorize_layer, lpml_snmf_fit, snmf_objective,
                               snmf_update_h, snmf_update_w)
from .sparse_solver import (SolverParams, SparseSolveState, admm_solve,
                            convergence_report, gsadmm_solve, kkt_residual,
                            make_benchmark, soft_threshold)
from .classification import (CcrMatrix, ClassificationReport, CoefficientMatrix,
                             MethodConfig, StabilityReport, ccr_classify,
                             integrated_isrc_classify, issr_represent,
                             src_classify, stability_check)
from .evaluation import (CvResult, LabelAccessLog, MetricBundle, PcaEmbedding,
                         RocCurve, confusion_metrics, cross_validate, err_score,
                         imbalance_sweep, pca_embed, roc_auc,
                         train_fraction_sweep)
