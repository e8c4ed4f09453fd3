"""Expression matrix ingestion, normalization, and stratified fold planning.

File format: delimited text (comma or tab, auto-detected). The data file
carries sample ids in the first row and gene ids in the first column; the
labels file has one ``sample_id<delim>label`` pair per line. Label tokens are
mapped to class indices 1..c in sorted token order.
"""

from dataclasses import dataclass, field

import numpy as np

_MISSING_TOKENS = {"", "na", "nan", "null", "?"}


class DataError(ValueError):
    """Raised for malformed or inconsistent input files."""


@dataclass
class ExpressionDataset:
    """Genes x samples matrix with ids and 1-based class labels."""

    values: np.ndarray
    gene_ids: list
    sample_ids: list
    labels: np.ndarray
    label_names: tuple
    log: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        d, n = self.values.shape
        if len(self.gene_ids) != d:
            raise DataError("gene id count %d != row count %d" % (len(self.gene_ids), d))
        if len(self.sample_ids) != n:
            raise DataError("sample id count %d != column count %d" % (len(self.sample_ids), n))
        if self.labels.shape != (n,):
            raise DataError("label count %d != sample count %d" % (self.labels.size, n))
        if not np.all(np.isfinite(self.values)):
            raise DataError("dataset contains non-finite values after ingestion")
        c = len(self.label_names)
        present = set(np.unique(self.labels).tolist())
        if present != set(range(1, c + 1)):
            raise DataError("class indices %s do not cover 1..%d" % (sorted(present), c))
        self.values.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def n_genes(self):
        return self.values.shape[0]

    @property
    def n_samples(self):
        return self.values.shape[1]

    @property
    def n_classes(self):
        return len(self.label_names)

    def class_counts(self):
        return {j: int(np.sum(self.labels == j)) for j in range(1, self.n_classes + 1)}

    def label_index(self, token):
        try:
            return self.label_names.index(token) + 1
        except ValueError:
            raise DataError("unknown label token %r (known: %s)" % (token, list(self.label_names)))


@dataclass
class Partition:
    train_indices: np.ndarray
    test_indices: np.ndarray

    def __post_init__(self):
        self.train_indices = np.asarray(self.train_indices, dtype=np.int64)
        self.test_indices = np.asarray(self.test_indices, dtype=np.int64)
        if self.train_indices.size == 0 or self.test_indices.size == 0:
            raise DataError("partition sides must both be nonempty")
        if set(self.train_indices.tolist()) & set(self.test_indices.tolist()):
            raise DataError("train and test indices overlap")


@dataclass
class FoldPlan:
    folds: list
    seed: int
    k_folds: int

    def __post_init__(self):
        seen = [i for p in self.folds for i in p.test_indices.tolist()]
        if len(seen) != len(set(seen)):
            raise DataError("a sample appears in more than one test fold")


def _detect_delimiter(line, override=None):
    if override is not None:
        return override
    return "\t" if line.count("\t") >= line.count(",") else ","


def load_matrix(path, labels_path, orientation="genes_as_rows", delimiter=None,
                impute="reject", standardize=False):
    """Load a delimited expression matrix plus labels file.

    orientation selects whether file rows are genes (default) or samples.
    impute: "reject" errors on missing cells, "mean" imputes the per-gene mean.
    standardize: optional per-gene z-scoring after ingestion.
    """
    if orientation not in ("genes_as_rows", "samples_as_rows"):
        raise DataError("orientation must be genes_as_rows or samples_as_rows")
    if impute not in ("reject", "mean"):
        raise DataError("impute must be reject or mean")

    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in fh]
    lines = [ln for ln in lines if ln.strip() != ""]
    if len(lines) < 2:
        raise DataError("no data rows in %s" % path)
    delim = _detect_delimiter(lines[0], delimiter)

    header = lines[0].split(delim)
    col_ids = [c.strip() for c in header[1:]]
    row_ids = []
    cells = []
    missing = []
    for r, ln in enumerate(lines[1:]):
        parts = ln.split(delim)
        if len(parts) != len(col_ids) + 1:
            raise DataError("row %d has %d cells, expected %d" % (r + 2, len(parts) - 1, len(col_ids)))
        row_ids.append(parts[0].strip())
        row = np.empty(len(col_ids))
        for c, tok in enumerate(parts[1:]):
            t = tok.strip()
            if t.lower() in _MISSING_TOKENS:
                row[c] = np.nan
                missing.append((r, c))
                continue
            try:
                v = float(t)
            except ValueError:
                raise DataError("unparseable cell at data row %d, column %d: %r" % (r + 1, c + 1, tok))
            if not np.isfinite(v):
                raise DataError("non-finite cell at data row %d, column %d: %r" % (r + 1, c + 1, tok))
            row[c] = v
        cells.append(row)
    values = np.vstack(cells)

    if orientation == "samples_as_rows":
        values = values.T
        row_ids, col_ids = col_ids, row_ids
    gene_ids, sample_ids = row_ids, col_ids

    if len(set(sample_ids)) != len(sample_ids):
        dup = sorted({s for s in sample_ids if sample_ids.count(s) > 1})
        raise DataError("duplicate sample id(s): %s" % dup)

    imputed = 0
    if missing:
        if impute == "reject":
            r, c = missing[0]
            raise DataError("missing value at data row %d, column %d (use mean imputation to allow)" % (r + 1, c + 1))
        for g in range(values.shape[0]):
            mask = np.isnan(values[g])
            if mask.any():
                if mask.all():
                    raise DataError("gene row %d is entirely missing" % (g + 1))
                values[g, mask] = np.mean(values[g, ~mask])
                imputed += int(mask.sum())

    label_map = _read_labels(labels_path, delimiter)
    unknown = [s for s in label_map if s not in set(sample_ids)]
    if unknown:
        raise DataError("labels refer to unknown sample id(s): %s" % unknown[:5])
    missing_lab = [s for s in sample_ids if s not in label_map]
    if missing_lab:
        raise DataError("no label for sample id(s): %s" % missing_lab[:5])
    tokens = [label_map[s] for s in sample_ids]
    names = tuple(sorted(set(tokens)))
    if len(names) < 2:
        raise DataError("need at least 2 classes, found %s" % (names,))
    labels = np.array([names.index(t) + 1 for t in tokens], dtype=np.int64)

    log = {
        "source": str(path),
        "orientation": orientation,
        "shape": [int(values.shape[0]), int(values.shape[1])],
        "class_counts": {names[j - 1]: int(np.sum(labels == j)) for j in range(1, len(names) + 1)},
        "missing_policy": impute,
        "imputed_cells": imputed,
        "standardized": bool(standardize),
    }
    if standardize:
        mu = values.mean(axis=1, keepdims=True)
        sd = values.std(axis=1, keepdims=True)
        sd[sd == 0] = 1.0
        values = (values - mu) / sd
    return ExpressionDataset(values, gene_ids, sample_ids, labels, names, log)


def _read_labels(path, delimiter=None):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise DataError("empty labels file %s" % path)
    delim = _detect_delimiter(lines[0], delimiter)
    out = {}
    for i, ln in enumerate(lines):
        parts = [p.strip() for p in ln.split(delim)]
        if len(parts) != 2:
            raise DataError("labels line %d is not 'sample_id%slabel'" % (i + 1, delim))
        if parts[0] in out:
            raise DataError("duplicate sample id in labels: %r" % parts[0])
        out[parts[0]] = parts[1]
    return out


def save_matrix(ds, path, labels_path):
    """Serialize a dataset; reloading reproduces the matrix bit-for-bit."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("gene_id," + ",".join(ds.sample_ids) + "\n")
        for g in range(ds.n_genes):
            fh.write(ds.gene_ids[g] + "," + ",".join(repr(float(v)) for v in ds.values[g]) + "\n")
    with open(labels_path, "w", encoding="utf-8", newline="\n") as fh:
        for s, lab in zip(ds.sample_ids, ds.labels):
            fh.write("%s,%s\n" % (s, ds.label_names[lab - 1]))


def shift_nonnegative(ds):
    """Subtract each gene row's minimum when negative, so all values >= 0.

    Rows already nonnegative are untouched. Applied shifts are recorded in
    the dataset log under "nonneg_shifts".
    """
    values = np.array(ds.values)
    mins = values.min(axis=1)
    shifts = np.where(mins < 0, -mins, 0.0)
    values += shifts[:, None]
    log = dict(ds.log)
    log["nonneg_shifts"] = {ds.gene_ids[i]: float(shifts[i]) for i in np.nonzero(shifts)[0]}
    return ExpressionDataset(values, list(ds.gene_ids), list(ds.sample_ids),
                             np.array(ds.labels), ds.label_names, log)


def stratified_kfold(ds, k, seed):
    """Build a stratified k-fold plan, deterministic for a fixed seed.

    Each class's samples are shuffled and dealt into k near-equal chunks;
    classes smaller than k spread one sample per fold. Per-fold class counts
    stay within one sample of the proportional share.
    """
    n = ds.n_samples
    if k < 2:
        raise DataError("k must be >= 2, got %d" % k)
    if k > n:
        raise DataError("k=%d exceeds sample count %d" % (k, n))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), n, k]))
    buckets = [[] for _ in range(k)]
    for j in range(1, ds.n_classes + 1):
        members = np.nonzero(ds.labels == j)[0]
        members = members[rng.permutation(members.size)]
        # deal sizes: first (m mod k) folds take the extra sample
        m = members.size
        base, extra = divmod(m, k)
        pos = 0
        for f in range(k):
            take = base + (1 if f < extra else 0)
            buckets[f].extend(members[pos:pos + take].tolist())
            pos += take
    folds = []
    all_idx = np.arange(n)
    for f in range(k):
        test = np.array(sorted(buckets[f]), dtype=np.int64)
        if test.size == 0:
            raise DataError("fold %d is empty; reduce k" % f)
        train = np.setdiff1d(all_idx, test)
        folds.append(Partition(train, test))
    return FoldPlan(folds, int(seed), int(k))
