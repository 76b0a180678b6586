"""Small helpers for deterministic text artifacts.

All floats written to CSV use %.17g so values round-trip exactly; JSON is
emitted with sorted keys and fixed separators so identical inputs give
byte-identical files.
"""

import json

import numpy as np


def fmt_float(x) -> str:
    return "%.17g" % float(x)


def write_csv(file, header, rows) -> None:
    """Write rows of floats with a header line. `file` is a path."""
    with open(file, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt_float(v) for v in row) + "\n")


def matrix_to_obj(m) -> dict:
    """Matrix as a JSON-friendly dict, row-major data with explicit shape."""
    m = np.asarray(m, dtype=float)
    return {"shape": list(m.shape), "data": m.reshape(-1).tolist()}


def obj_to_matrix(obj) -> np.ndarray:
    data = np.asarray(obj["data"], dtype=float)
    return data.reshape(obj["shape"])


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, no whitespace variation."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def dump_json(obj, file) -> None:
    with open(file, "w") as fh:
        fh.write(canonical_json(obj))


def load_json(file):
    with open(file) as fh:
        return json.load(fh)
