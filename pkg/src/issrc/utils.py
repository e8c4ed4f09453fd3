"""Shared helpers: seed derivation, deterministic serialization."""

import json

import numpy as np


def derive_seed(root_seed, *path):
    """Derive a child seed from a root seed and a tuple of stage/fold keys.

    Uses numpy's SeedSequence so that (root, path) -> seed is a documented,
    stable function: equal inputs always give equal child seeds and distinct
    paths give statistically independent streams.
    """
    keys = [int(root_seed)] + [int(p) for p in path]
    return int(np.random.SeedSequence(keys).generate_state(1, np.uint64)[0])


def fmt_float(x):
    """Render a float with shortest round-trip representation (repr)."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    xf = float(x)
    if np.isnan(xf):
        return "nan"
    return repr(xf)


def write_csv(path, header, rows):
    """Write rows of mixed str/float cells; floats use repr for determinism."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [c if isinstance(c, str) else fmt_float(c) for c in row]
            fh.write(",".join(cells) + "\n")


def json_dumps_stable(obj):
    """Deterministic JSON text: sorted keys, repr floats, trailing newline."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if np.isnan(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj
