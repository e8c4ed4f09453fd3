import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


def make_two_cluster(shift=3.0, seed=0, d=40, n1=30, n2=30, informative=12):
    """Directional two-class fixture: half the marker genes up per class."""
    rng = np.random.default_rng(seed)
    base = rng.uniform(1, 3, (d, n1 + n2))
    half = informative // 2
    base[0:half, n1:] += shift
    base[half:informative, :n1] += shift
    labels = np.array([1] * n1 + [2] * n2)
    perm = rng.permutation(n1 + n2)
    return base[:, perm], labels[perm]


@pytest.fixture
def two_cluster():
    return make_two_cluster()


def write_dataset_files(tmp_path, values, labels, label_names=("neg", "pos"),
                        stem="data"):
    """Write a matrix + labels pair in the package's file format."""
    d, n = values.shape
    data = tmp_path / ("%s.csv" % stem)
    lab = tmp_path / ("%s_labels.csv" % stem)
    sample_ids = ["s%03d" % i for i in range(n)]
    with open(data, "w") as fh:
        fh.write("gene_id," + ",".join(sample_ids) + "\n")
        for g in range(d):
            fh.write("g%04d," % g + ",".join(repr(float(v)) for v in values[g]) + "\n")
    with open(lab, "w") as fh:
        for i, s in enumerate(sample_ids):
            fh.write("%s,%s\n" % (s, label_names[int(labels[i]) - 1]))
    return str(data), str(lab)
