"""Command-line pipeline: selection, feature learning, classification,
cross-validation, solver benchmarks, and stability checks.

Configuration is flat ``key = value`` text (comma lists), overridable by
command-line flags; the ISSRC_SEED environment variable overrides the seed.
Every run writes a manifest with the config hash, seed, tool versions, and
per-stage wall times, so results are exactly reproducible.
"""

import argparse
import hashlib
import os
import re
import sys
import time
from dataclasses import dataclass, fields, replace

import numpy as np

from . import __version__, classification, dataset, evaluation, feature_learning
from . import gene_selection, sparse_solver
from .utils import derive_seed, json_dumps_stable, write_csv


class ConfigError(ValueError):
    """Carries every violated field at once."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class PipelineConfig:
    data: str = ""
    labels: str = ""
    orientation: str = "genes_as_rows"
    impute: str = "reject"
    standardize: bool = False
    positive_label: str = ""
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
    solver_lambda: float = None  # None = scale-adaptive policy
    sigma: float = 1.0
    rho: float = 1.8
    theta_policy: str = "spectral"
    gradient_factor: str = "two"
    solver_tol: float = 1e-8
    solver_max_iters: int = 2000
    folds: int = 10
    seed: int = 0
    class_size_norm: bool = True
    scale_before_features: bool = True
    threads: int = 1
    outdir: str = "issrc_out"

    def validate(self):
        errors = []
        if self.orientation not in ("genes_as_rows", "samples_as_rows"):
            errors.append("orientation must be genes_as_rows or samples_as_rows")
        if self.impute not in ("reject", "mean"):
            errors.append("impute must be reject or mean")
        if self.method not in ("integrated-issrc", "issrc", "src"):
            errors.append("method must be integrated-issrc, issrc or src")
        if self.pre_count < 1:
            errors.append("pre_count must be >= 1")
        if self.final_count < 1:
            errors.append("final_count must be >= 1")
        if self.final_count > self.pre_count:
            errors.append("final_count must be <= pre_count")
        if not (0.0 < self.grid_step <= 0.1):
            errors.append("grid_step must lie in (0, 0.1]")
        if self.selection_score not in ("dif", "bw", "snr", "auc"):
            errors.append("selection_score must be dif, bw, snr or auc")
        if len(self.ranks) != len(self.lambdas):
            errors.append("ranks and lambdas must have equal length")
        if any(r < 1 for r in self.ranks):
            errors.append("ranks must be positive integers")
        if any(l < 0 for l in self.lambdas):
            errors.append("lambdas must be >= 0")
        if self.nmf_max_iters < 1:
            errors.append("nmf_max_iters must be >= 1")
        if not self.nmf_tol >= 0:
            errors.append("nmf_tol must be >= 0")
        if self.solver_lambda is not None and not self.solver_lambda >= 0:
            errors.append("solver_lambda must be >= 0 or auto")
        if not self.sigma > 0:
            errors.append("sigma must be positive")
        if not 0.0 < self.rho < 2.0:
            errors.append("rho must lie in (0,2)")
        if self.theta_policy not in ("spectral", "frobenius"):
            errors.append("theta_policy must be spectral or frobenius")
        if self.gradient_factor not in ("one", "two"):
            errors.append("gradient_factor must be one or two")
        if not self.solver_tol >= 0:
            errors.append("solver_tol must be >= 0")
        if self.solver_max_iters < 1:
            errors.append("solver_max_iters must be >= 1")
        if self.folds < 2:
            errors.append("folds must be >= 2")
        if self.seed < 0:
            errors.append("seed must be a nonnegative integer")
        if self.threads < 1:
            errors.append("threads must be >= 1")
        if errors:
            raise ConfigError(errors)
        return self

    def solver_params(self):
        return sparse_solver.SolverParams(
            lam=self.solver_lambda, sigma=self.sigma, rho=self.rho,
            theta_policy=self.theta_policy, max_iters=self.solver_max_iters,
            tol=self.solver_tol,
            gradient_factor=2 if self.gradient_factor == "two" else 1)

    def method_config(self, positive_class=None):
        return classification.MethodConfig(
            method=self.method, skip_selection=self.skip_selection,
            skip_features=self.skip_features, pre_count=self.pre_count,
            final_count=self.final_count, grid_step=self.grid_step,
            selection_score=self.selection_score, ranks=tuple(self.ranks),
            lambdas=tuple(self.lambdas), nmf_max_iters=self.nmf_max_iters,
            nmf_tol=self.nmf_tol, solver=self.solver_params(), seed=self.seed,
            class_size_norm=self.class_size_norm,
            scale_before_features=self.scale_before_features,
            positive_class=positive_class, threads=self.threads)


_BOOL_FIELDS = {"standardize", "skip_selection", "skip_features",
                "class_size_norm", "scale_before_features"}
_INT_FIELDS = {"pre_count", "final_count", "nmf_max_iters", "solver_max_iters",
               "folds", "seed", "threads"}
_FLOAT_FIELDS = {"grid_step", "nmf_tol", "sigma", "rho", "solver_tol"}
_TUPLE_INT_FIELDS = {"ranks"}
_TUPLE_FLOAT_FIELDS = {"lambdas"}


def _parse_value(key, raw, errors):
    raw = raw.strip()
    try:
        if key in _BOOL_FIELDS:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError("not a boolean")
        if key in _INT_FIELDS:
            return int(raw)
        if key in _FLOAT_FIELDS:
            return float(raw)
        if key in _TUPLE_INT_FIELDS:
            return tuple(int(p.strip()) for p in raw.split(",") if p.strip())
        if key in _TUPLE_FLOAT_FIELDS:
            return tuple(float(p.strip()) for p in raw.split(",") if p.strip())
        if key == "solver_lambda":
            return None if raw.lower() == "auto" else float(raw)
        return raw
    except ValueError:
        errors.append("%s: cannot parse %r" % (key, raw))
        return None


def validate_config(path):
    """Parse a key=value config file; collect every violation at once."""
    known = {f.name for f in fields(PipelineConfig)}
    values = {}
    errors = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                errors.append("line %d: expected 'key = value'" % lineno)
                continue
            key, raw = (p.strip() for p in line.split("=", 1))
            if key not in known:
                errors.append("unknown key %r (line %d)" % (key, lineno))
                continue
            values[key] = _parse_value(key, raw, errors)
    if errors:
        raise ConfigError(errors)
    cfg = replace(PipelineConfig(), **values)
    cfg.validate()
    return cfg


def serialize_config(cfg):
    """Canonical flat text form: sorted key = value lines."""
    lines = []
    for f in sorted(fields(PipelineConfig), key=lambda f: f.name):
        v = getattr(cfg, f.name)
        if f.name in _TUPLE_INT_FIELDS | _TUPLE_FLOAT_FIELDS:
            v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif f.name == "solver_lambda":
            v = "auto" if v is None else repr(float(v))
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append("%s = %s" % (f.name, v))
    return "\n".join(lines) + "\n"


def config_hash(cfg):
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()


class StageTimer:
    def __init__(self):
        self.times = {}

    def stage(self, name):
        return _Stage(self, name)


class _Stage:
    def __init__(self, timer, name):
        self.timer, self.name = timer, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.timer.times[self.name] = self.timer.times.get(self.name, 0.0) + (
            time.perf_counter() - self.t0)
        return False


def _safe_name(gene_id):
    return re.sub(r"[^A-Za-z0-9_.-]", "_", gene_id)


def _write_manifest(outdir, command, cfg, timer, extra=None):
    config_dict = {}
    for f in fields(PipelineConfig):
        v = getattr(cfg, f.name)
        config_dict[f.name] = list(v) if isinstance(v, tuple) else v
    manifest = {
        "command": command,
        "config": config_dict,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "versions": {
            "issrc": __version__,
            "python": "%d.%d.%d" % sys.version_info[:3],
            "numpy": np.__version__,
        },
        "wall_times_s": timer.times,
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(outdir, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(json_dumps_stable(manifest))


def _load_dataset(cfg):
    ds = dataset.load_matrix(cfg.data, cfg.labels, orientation=cfg.orientation,
                             impute=cfg.impute, standardize=cfg.standardize)
    positive = None
    if cfg.positive_label:
        positive = ds.label_index(cfg.positive_label)
    return ds, positive


def _emit_gene_scores(outdir, table, ds):
    rows = []
    for i in range(table.gene_index.size):
        gid = table.gene_ids[i] if table.gene_ids else ds.gene_ids[int(table.gene_index[i])]
        rows.append((gid, table.bw[i], table.snr[i], table.auc[i], table.dif[i],
                     "true" if table.selected[i] else "false"))
    write_csv(os.path.join(outdir, "gene_scores.csv"),
              ["gene_id", "bw", "snr", "auc", "dif", "selected"], rows)
    for g, curve in table.dca.items():
        if not table.selected[g]:
            continue
        gid = table.gene_ids[g] if table.gene_ids else ds.gene_ids[g]
        rows = list(zip(curve.thresholds, curve.nb_model, curve.nb_treat_all,
                        curve.nb_treat_none))
        write_csv(os.path.join(outdir, "dca_%s.csv" % _safe_name(gid)),
                  ["p_t", "nb_model", "nb_treat_all", "nb_treat_none"], rows)


def _emit_factors(outdir, stack):
    for l, layer in enumerate(stack.layers, start=1):
        rows = []
        for name, m in (("w", layer.w), ("h", layer.h)):
            for r in range(m.shape[0]):
                for c in range(m.shape[1]):
                    rows.append((name, float(r), float(c), m[r, c]))
        write_csv(os.path.join(outdir, "factors_L%d.csv" % l),
                  ["matrix", "row", "col", "value"], rows)
    rows = []
    for l, layer in enumerate(stack.layers, start=1):
        for s, obj in enumerate(layer.objective_trace):
            rows.append((float(l), float(s), obj))
    write_csv(os.path.join(outdir, "objective_trace.csv"),
              ["layer", "step", "objective"], rows)


def _emit_diagnostics(outdir, diag):
    for name, corr in diag["correlations"].items():
        rows = [tuple(corr[i]) for i in range(corr.shape[0])]
        write_csv(os.path.join(outdir, "correlation_%s.csv" % name),
                  ["s%d" % j for j in range(corr.shape[1])], rows)
    quart_rows = []
    for name, per_class in diag.get("quartiles", {}).items():
        for cl, q in per_class.items():
            quart_rows.append((name, float(cl)) + tuple(q))
    if quart_rows:
        write_csv(os.path.join(outdir, "feature_quartiles.csv"),
                  ["matrix", "class", "min", "q1", "median", "q3", "max"], quart_rows)


def _emit_predictions(outdir, sample_ids, preds, truths, scores, classes, label_names):
    rows = []
    header = ["sample_id", "predicted", "true"] + ["score_%s" % label_names[c - 1] for c in classes]
    for i, sid in enumerate(sample_ids):
        per_class = tuple(scores[j][i] for j in range(len(classes)))
        rows.append((sid, label_names[preds[i] - 1], label_names[truths[i] - 1]) + per_class)
    write_csv(os.path.join(outdir, "predictions.csv"), header, rows)


def _emit_roc(outdir, roc):
    write_csv(os.path.join(outdir, "roc.csv"), ["fpr", "tpr", "threshold"],
              list(zip(roc.fpr, roc.tpr, roc.thresholds)))


def _emit_dca_classifier(outdir, curve):
    write_csv(os.path.join(outdir, "dca_classifier.csv"),
              ["p_t", "nb_model", "nb_treat_all", "nb_treat_none"],
              list(zip(curve.thresholds, curve.nb_model, curve.nb_treat_all,
                       curve.nb_treat_none)))


def _emit_pca(outdir, ds, stages):
    rows = []
    for stage, matrix in stages:
        if matrix.shape[0] < 3 or matrix.shape[1] < 3:
            continue
        emb = evaluation.pca_embed(matrix, 3)
        for i, sid in enumerate(ds.sample_ids):
            rows.append((stage, sid, ds.label_names[ds.labels[i] - 1],
                         emb.coords[i, 0], emb.coords[i, 1], emb.coords[i, 2]))
    write_csv(os.path.join(outdir, "pca3.csv"),
              ["stage", "sample_id", "label", "pc1", "pc2", "pc3"], rows)


def _metrics_json(cv, cfg, ds):
    per_fold = []
    for fr in cv.folds:
        entry = {"fold": fr.fold, "flags": {k: True for k in fr.flags} if fr.flags else {}}
        entry.update(fr.metrics.as_dict())
        per_fold.append(entry)
    pooled = cv.pooled_metrics.as_dict()
    data = {
        "method": cfg.method,
        "positive_class": cv.positive_class,
        "positive_label": ds.label_names[cv.positive_class - 1],
        "folds": per_fold,
        "aggregate": {
            "mean": cv.mean_metrics,
            "sd": cv.sd_metrics,
            "pooled": pooled,
            "pooled_auc": None if cv.roc is None else cv.roc.auc,
        },
    }
    return data


def _split_for_classify(ds, test_fraction, seed, test_ids=None):
    if test_ids:
        wanted = set(test_ids)
        missing = wanted - set(ds.sample_ids)
        if missing:
            raise ConfigError(["unknown test sample id(s): %s" % sorted(missing)])
        test_idx = np.array([i for i, s in enumerate(ds.sample_ids) if s in wanted],
                            dtype=np.int64)
    else:
        rng = np.random.default_rng(derive_seed(seed, 9))
        parts = []
        for cl in range(1, ds.n_classes + 1):
            members = np.nonzero(ds.labels == cl)[0]
            members = members[rng.permutation(members.size)]
            n_test = max(1, int(round(test_fraction * members.size)))
            n_test = min(n_test, members.size - 1)
            parts.append(members[:n_test])
        test_idx = np.sort(np.concatenate(parts))
    train_idx = np.setdiff1d(np.arange(ds.n_samples), test_idx)
    return dataset.Partition(train_idx, test_idx)


# ---------------------------------------------------------------------------
# subcommand bodies

def _cmd_select_genes(cfg, args):
    timer = StageTimer()
    with timer.stage("load"):
        ds, positive = _load_dataset(cfg)
    with timer.stage("gene_selection"):
        table, chosen = gene_selection.select_genes(
            ds.values, ds.labels, pre_count=min(cfg.pre_count, ds.n_genes),
            final_count=min(cfg.final_count, cfg.pre_count, ds.n_genes),
            grid_step=cfg.grid_step, positive=positive,
            final_score=cfg.selection_score, threads=cfg.threads,
            gene_ids=ds.gene_ids)
    _emit_gene_scores(cfg.outdir, table, ds)
    _write_manifest(cfg.outdir, "select-genes", cfg, timer,
                    {"selected_genes": [ds.gene_ids[g] for g in chosen]})
    print("selected %d genes -> %s" % (chosen.size, cfg.outdir))
    return 0


def _cmd_learn_features(cfg, args):
    timer = StageTimer()
    with timer.stage("load"):
        ds, positive = _load_dataset(cfg)
    values = ds.values
    if not cfg.skip_selection:
        with timer.stage("gene_selection"):
            _, chosen = gene_selection.select_genes(
                values, ds.labels, pre_count=min(cfg.pre_count, ds.n_genes),
                final_count=min(cfg.final_count, cfg.pre_count, ds.n_genes),
                grid_step=cfg.grid_step, positive=positive,
                final_score=cfg.selection_score, threads=cfg.threads)
        values = values[chosen]
    with timer.stage("feature_learning"):
        mins = values.min(axis=1)
        shifted = values + np.where(mins < 0, -mins, 0.0)[:, None]
        if cfg.scale_before_features and shifted.max() > 0:
            shifted = shifted / shifted.max()
        stack = feature_learning.lpml_snmf_fit(
            shifted, None, ranks=cfg.ranks, lambdas=cfg.lambdas,
            seed=derive_seed(cfg.seed, 1), max_iters=cfg.nmf_max_iters,
            tol=cfg.nmf_tol)
    _emit_factors(cfg.outdir, stack)
    diag = feature_learning.emit_factor_diagnostics(stack, shifted, ds.labels)
    _emit_diagnostics(cfg.outdir, diag)
    _write_manifest(cfg.outdir, "learn-features", cfg, timer)
    print("fitted %d layers -> %s" % (len(stack.layers), cfg.outdir))
    return 0


def _cmd_classify(cfg, args):
    timer = StageTimer()
    with timer.stage("load"):
        ds, positive = _load_dataset(cfg)
    test_ids = None
    if args.test_ids:
        with open(args.test_ids, "r", encoding="utf-8") as fh:
            test_ids = [ln.strip() for ln in fh if ln.strip()]
    part = _split_for_classify(ds, args.test_fraction, cfg.seed, test_ids)
    mcfg = cfg.method_config(positive)
    with timer.stage("classify"):
        if cfg.method == "src":
            report = classification.src_classify(
                ds.values[:, part.train_indices], ds.values[:, part.test_indices],
                ds.labels[part.train_indices], mcfg)
        else:
            report = classification.integrated_isrc_classify(
                ds.values[:, part.train_indices], ds.values[:, part.test_indices],
                ds.labels[part.train_indices], mcfg)
    truths = ds.labels[part.test_indices]
    sample_ids = [ds.sample_ids[i] for i in part.test_indices]
    _emit_predictions(cfg.outdir, sample_ids, report.predictions, truths,
                      report.scores, list(report.classes), ds.label_names)
    if args.emit_coefficients and report.coefficients is not None:
        rows = []
        vals = report.coefficients.values
        for c in range(vals.shape[1]):
            for r in range(vals.shape[0]):
                rows.append((float(c), float(r), vals[r, c]))
        write_csv(os.path.join(cfg.outdir, "coefficients.csv"),
                  ["train_column", "test_row", "value"], rows)
    metrics = evaluation.confusion_metrics(report.predictions, truths,
                                           positive or ds.n_classes)
    with open(os.path.join(cfg.outdir, "metrics.json"), "w", encoding="utf-8") as fh:
        fh.write(json_dumps_stable({"method": cfg.method, "split": "holdout",
                                    "metrics": metrics.as_dict()}))
    _write_manifest(cfg.outdir, "classify", cfg, timer,
                    {"n_train": int(part.train_indices.size),
                     "n_test": int(part.test_indices.size)})
    acc = metrics.accuracy
    print("accuracy %.4f on %d held-out samples -> %s"
          % (acc if acc is not None else float("nan"), truths.size, cfg.outdir))
    return 0


def _cmd_cross_validate(cfg, args):
    timer = StageTimer()
    with timer.stage("load"):
        ds, positive = _load_dataset(cfg)
    plan = dataset.stratified_kfold(ds, cfg.folds, cfg.seed)
    mcfg = cfg.method_config(positive)
    with timer.stage("cross_validate"):
        cv = evaluation.cross_validate(ds, plan, mcfg)
    with timer.stage("reports"):
        data = _metrics_json(cv, cfg, ds)
        with open(os.path.join(cfg.outdir, "metrics.json"), "w", encoding="utf-8") as fh:
            fh.write(json_dumps_stable(data))
        if cv.roc is not None:
            _emit_roc(cfg.outdir, cv.roc)
            curve = evaluation.classifier_dca(cv.pooled_scores, cv.pooled_truths,
                                              cv.positive_class, cfg.grid_step)
            _emit_dca_classifier(cfg.outdir, curve)
        # fold-order pooled predictions, mapped back to sample ids
        order = np.concatenate([fr.test_indices for fr in cv.folds
                                if fr.predictions.size])
        _emit_predictions(cfg.outdir, [ds.sample_ids[i] for i in order],
                          cv.pooled_predictions, cv.pooled_truths,
                          [cv.pooled_scores], [cv.positive_class], ds.label_names)
        err_rows = []
        scored = [fr for fr in cv.folds if fr.predictions.size]
        errors = [1.0 - fr.metrics.accuracy for fr in scored]
        best = min(errors) if errors else None
        for fr, er in zip(scored, errors):
            err_rows.append((float(fr.fold), fr.metrics.accuracy, er,
                             evaluation.err_score(er, best)))
        write_csv(os.path.join(cfg.outdir, "err_table.csv"),
                  ["fold", "accuracy", "error_rate", "err_vs_best"], err_rows)
        _emit_pca_stages(cfg, ds, positive)
    sweeps = {}
    if args.imbalance_sweep:
        with timer.stage("imbalance_sweep"):
            rows = evaluation.imbalance_sweep(ds, mcfg, test_size=args.sweep_test_size,
                                              seed=cfg.seed)
        write_csv(os.path.join(cfg.outdir, "imbalance_sweep.csv"),
                  ["ratio", "n_positive", "n_negative", "accuracy", "error_rate", "err"],
                  [(r["ratio"], float(r["n_positive"]), float(r["n_negative"]),
                    r["accuracy"], r["error_rate"], r["err"]) for r in rows])
        sweeps["imbalance_rows"] = len(rows)
    if args.train_fraction_sweep:
        with timer.stage("train_fraction_sweep"):
            rows = evaluation.train_fraction_sweep(ds, mcfg, seed=cfg.seed)
        write_csv(os.path.join(cfg.outdir, "train_fraction_sweep.csv"),
                  ["train_fraction", "method", "n_train", "accuracy"],
                  [(r["train_fraction"], r["method"], float(r["n_train"]),
                    r["accuracy"]) for r in rows])
        sweeps["train_fraction_rows"] = len(rows)
    mean_acc = cv.mean_accuracy
    extra = {"mean_accuracy": mean_acc,
             "reference_accuracy_pct": 98.70,
             "accuracy_gap_pct": None if mean_acc is None else 98.70 - 100.0 * mean_acc}
    extra.update(sweeps)
    _write_manifest(cfg.outdir, "cross-validate", cfg, timer, extra)
    print("mean accuracy %.4f over %d folds -> %s"
          % (mean_acc if mean_acc is not None else float("nan"),
             len(cv.folds), cfg.outdir))
    return 0


def _emit_pca_stages(cfg, ds, positive):
    stages = [("original", ds.values)]
    if not cfg.skip_selection and cfg.method != "issrc":
        pre = min(cfg.pre_count, ds.n_genes)
        fin = min(cfg.final_count, pre)
        table, chosen = gene_selection.select_genes(
            ds.values, ds.labels, pre_count=pre, final_count=fin,
            grid_step=cfg.grid_step, positive=positive,
            final_score=cfg.selection_score, threads=cfg.threads)
        pre_rows = np.nonzero(table.prescreened)[0]
        stages.append(("prescreened", ds.values[pre_rows]))
        stages.append(("selected", ds.values[chosen]))
    _emit_pca(cfg.outdir, ds, stages)


def _cmd_run(cfg, args):
    timer = StageTimer()
    with timer.stage("load"):
        ds, positive = _load_dataset(cfg)
    # reporting artifacts from all-sample stages (unsupervised feature fit)
    with timer.stage("gene_selection"):
        if not cfg.skip_selection and cfg.method != "issrc":
            table, chosen = gene_selection.select_genes(
                ds.values, ds.labels, pre_count=min(cfg.pre_count, ds.n_genes),
                final_count=min(cfg.final_count, cfg.pre_count, ds.n_genes),
                grid_step=cfg.grid_step, positive=positive,
                final_score=cfg.selection_score, threads=cfg.threads,
                gene_ids=ds.gene_ids)
            _emit_gene_scores(cfg.outdir, table, ds)
            selected = ds.values[chosen]
        else:
            selected = ds.values
    with timer.stage("feature_learning"):
        if not cfg.skip_features and cfg.method != "issrc":
            mins = selected.min(axis=1)
            shifted = selected + np.where(mins < 0, -mins, 0.0)[:, None]
            if cfg.scale_before_features and shifted.max() > 0:
                shifted = shifted / shifted.max()
            stack = feature_learning.lpml_snmf_fit(
                shifted, None, ranks=cfg.ranks, lambdas=cfg.lambdas,
                seed=derive_seed(cfg.seed, 1), max_iters=cfg.nmf_max_iters,
                tol=cfg.nmf_tol)
            _emit_factors(cfg.outdir, stack)
            _emit_diagnostics(cfg.outdir,
                              feature_learning.emit_factor_diagnostics(
                                  stack, shifted, ds.labels))
    plan = dataset.stratified_kfold(ds, cfg.folds, cfg.seed)
    mcfg = cfg.method_config(positive)
    with timer.stage("cross_validate"):
        cv = evaluation.cross_validate(ds, plan, mcfg)
    with timer.stage("reports"):
        with open(os.path.join(cfg.outdir, "metrics.json"), "w", encoding="utf-8") as fh:
            fh.write(json_dumps_stable(_metrics_json(cv, cfg, ds)))
        if cv.roc is not None:
            _emit_roc(cfg.outdir, cv.roc)
            _emit_dca_classifier(cfg.outdir, evaluation.classifier_dca(
                cv.pooled_scores, cv.pooled_truths, cv.positive_class, cfg.grid_step))
        order = np.concatenate([fr.test_indices for fr in cv.folds
                                if fr.predictions.size])
        _emit_predictions(cfg.outdir, [ds.sample_ids[i] for i in order],
                          cv.pooled_predictions, cv.pooled_truths,
                          [cv.pooled_scores], [cv.positive_class], ds.label_names)
        _emit_pca_stages(cfg, ds, positive)
    mean_acc = cv.mean_accuracy
    _write_manifest(cfg.outdir, "run", cfg, timer,
                    {"mean_accuracy": mean_acc,
                     "reference_accuracy_pct": 98.70,
                     "accuracy_gap_pct": None if mean_acc is None else 98.70 - 100.0 * mean_acc})
    print("pipeline done: mean accuracy %.4f -> %s"
          % (mean_acc if mean_acc is not None else float("nan"), cfg.outdir))
    return 0


def _cmd_bench_solver(cfg, args):
    timer = StageTimer()
    with timer.stage("bench"):
        instances = sparse_solver.make_benchmark(args.instances, r=args.rows,
                                                 k=args.cols, seed=cfg.seed)
        params = cfg.solver_params()
        if args.bench_lambda is not None:
            params = sparse_solver.params_with(params, lam=args.bench_lambda)
        if args.budget is not None:
            params = sparse_solver.params_with(params, max_iters=args.budget, tol=0.0)
        solvers = ("gsadmm", "admm") if args.solver == "both" else (args.solver,)
        rows = sparse_solver.convergence_report(instances, [params], solvers)
    write_csv(os.path.join(cfg.outdir, "solver_bench.csv"),
              ["instance", "solver", "rho", "sigma", "lam", "gradient_factor",
               "iterations", "converged", "final_primal", "final_kkt", "wall_time_s"],
              [(float(r["instance"]), r["solver"], r["rho"], r["sigma"], r["lam"],
                float(r["gradient_factor"]), float(r["iterations"]),
                "true" if r["converged"] else "false", r["final_primal"],
                r["final_kkt"], r["wall_time_s"]) for r in rows])
    _write_manifest(cfg.outdir, "bench-solver", cfg, timer,
                    {"instances": args.instances, "solvers": list(solvers)})
    print("benchmarked %d instances -> %s" % (args.instances, cfg.outdir))
    return 0


def _cmd_stability_test(cfg, args):
    timer = StageTimer()
    rng = np.random.default_rng(derive_seed(cfg.seed, 5))
    D = rng.standard_normal((args.rows, args.cols))
    target = rng.standard_normal(args.rows)
    svals = np.linalg.svd(D, compute_uv=False)
    eps = args.epsilon if args.epsilon is not None else (
        args.epsilon_scale * svals[-1] / svals[0])
    with timer.stage("stability"):
        reports = classification.stability_check(D, target, eps, args.trials,
                                                 seed=derive_seed(cfg.seed, 6))
    write_csv(os.path.join(cfg.outdir, "stability.csv"),
              ["trial", "epsilon", "observed_ratio", "bound", "kappa", "theta", "holds"],
              [(float(i), r.epsilon, r.observed_ratio, r.bound, r.kappa, r.theta,
                "true" if r.holds else "false") for i, r in enumerate(reports)])
    violations = sum(1 for r in reports if not r.holds)
    _write_manifest(cfg.outdir, "stability-test", cfg, timer,
                    {"trials": args.trials, "violations": violations})
    print("%d/%d trials satisfied the bound -> %s"
          % (len(reports) - violations, len(reports), cfg.outdir))
    return 0


# ---------------------------------------------------------------------------
# argument wiring

def _add_config_flags(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--data")
    p.add_argument("--labels")
    p.add_argument("--orientation", choices=["genes_as_rows", "samples_as_rows"])
    p.add_argument("--impute", choices=["reject", "mean"])
    p.add_argument("--standardize", action="store_true", default=None)
    p.add_argument("--positive-label", dest="positive_label")
    p.add_argument("--method", choices=["integrated-issrc", "issrc", "src"])
    p.add_argument("--skip-selection", dest="skip_selection", action="store_true", default=None)
    p.add_argument("--skip-features", dest="skip_features", action="store_true", default=None)
    p.add_argument("--pre-count", dest="pre_count", type=int)
    p.add_argument("--final-count", dest="final_count", type=int)
    p.add_argument("--grid-step", dest="grid_step", type=float)
    p.add_argument("--selection-score", dest="selection_score",
                   choices=["dif", "bw", "snr", "auc"])
    p.add_argument("--ranks", help="comma list, e.g. 8,6")
    p.add_argument("--lambdas", help="comma list, e.g. 0.2,0.5")
    p.add_argument("--nmf-max-iters", dest="nmf_max_iters", type=int)
    p.add_argument("--nmf-tol", dest="nmf_tol", type=float)
    p.add_argument("--lambda", dest="solver_lambda", help="l1 weight or 'auto'")
    p.add_argument("--sigma", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--theta-policy", dest="theta_policy", choices=["spectral", "frobenius"])
    p.add_argument("--gradient-factor", dest="gradient_factor", choices=["one", "two"])
    p.add_argument("--solver-tol", dest="solver_tol", type=float)
    p.add_argument("--solver-max-iters", dest="solver_max_iters", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--outdir")


def _merge_config(args):
    cfg = PipelineConfig()
    if args.config:
        cfg = validate_config(args.config)
    overrides = {}
    for f in fields(PipelineConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        if f.name in _TUPLE_INT_FIELDS:
            v = tuple(int(p) for p in str(v).split(","))
        elif f.name in _TUPLE_FLOAT_FIELDS:
            v = tuple(float(p) for p in str(v).split(","))
        elif f.name == "solver_lambda" and isinstance(v, str):
            v = None if v.lower() == "auto" else float(v)
            overrides[f.name] = v
            continue
        overrides[f.name] = v
    cfg = replace(cfg, **overrides)
    env_seed = os.environ.get("ISSRC_SEED")
    if env_seed is not None:
        try:
            cfg = replace(cfg, seed=int(env_seed))
        except ValueError:
            raise ConfigError(["ISSRC_SEED must be an integer, got %r" % env_seed])
    cfg.validate()
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(prog="issrc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    names = {
        "run": _cmd_run,
        "select-genes": _cmd_select_genes,
        "learn-features": _cmd_learn_features,
        "classify": _cmd_classify,
        "cross-validate": _cmd_cross_validate,
        "bench-solver": _cmd_bench_solver,
        "stability-test": _cmd_stability_test,
    }
    for name, fn in names.items():
        p = sub.add_parser(name)
        _add_config_flags(p)
        p.set_defaults(fn=fn)
        if name == "classify":
            p.add_argument("--test-fraction", dest="test_fraction", type=float, default=0.2)
            p.add_argument("--test-ids", dest="test_ids")
            p.add_argument("--emit-coefficients", action="store_true")
        if name == "cross-validate":
            p.add_argument("--imbalance-sweep", action="store_true")
            p.add_argument("--train-fraction-sweep", action="store_true")
            p.add_argument("--sweep-test-size", type=int, default=20)
        if name == "bench-solver":
            p.add_argument("--instances", type=int, default=50)
            p.add_argument("--solver", choices=["gsadmm", "admm", "both"], default="both")
            p.add_argument("--bench-rows", dest="rows", type=int, default=20)
            p.add_argument("--bench-cols", dest="cols", type=int, default=8)
            p.add_argument("--bench-lambda", dest="bench_lambda", type=float, default=0.1)
            p.add_argument("--budget", type=int, help="fixed iteration budget (tol=0)")
        if name == "stability-test":
            p.add_argument("--stab-rows", dest="rows", type=int, default=50)
            p.add_argument("--stab-cols", dest="cols", type=int, default=10)
            p.add_argument("--trials", type=int, default=200)
            p.add_argument("--epsilon", type=float, default=None)
            p.add_argument("--epsilon-scale", dest="epsilon_scale", type=float, default=0.01)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
        needs_data = args.fn not in (_cmd_bench_solver, _cmd_stability_test)
        if needs_data and (not cfg.data or not cfg.labels):
            raise ConfigError(["--data and --labels are required for this command"])
        os.makedirs(cfg.outdir, exist_ok=True)
        return args.fn(cfg, args)
    except ConfigError as exc:
        _report_failure(args, {"error": "config", "violations": exc.errors})
        for e in exc.errors:
            print("config error: %s" % e, file=sys.stderr)
        return 2
    except (dataset.DataError, ValueError, RuntimeError, OSError) as exc:
        _report_failure(args, {"error": type(exc).__name__, "message": str(exc)})
        print("error: %s" % exc, file=sys.stderr)
        return 1


def _report_failure(args, record):
    outdir = getattr(args, "outdir", None) or "."
    try:
        os.makedirs(outdir, exist_ok=True)
        with open(os.path.join(outdir, "error.json"), "w", encoding="utf-8") as fh:
            fh.write(json_dumps_stable(record))
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())
