"""Number formatting and CSV/JSON writers with round-trip exact floats."""

import json

import numpy as np


def fmt(v):
    """Format a real with 17 significant digits (round-trip exact)."""
    v = float(v)
    if v == 0.0:
        return "0"
    return format(v, ".17g")


def write_csv(path, header, columns):
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n):
            fh.write(",".join(_cell(c[i]) for c in cols) + "\n")


def _cell(v):
    if isinstance(v, (str, np.str_)):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return fmt(v)


def _normalize(obj):
    if isinstance(obj, dict):
        return {str(k): _normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_normalize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_normalize(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not np.isfinite(v):
            return str(v)
        # 17 significant digits, stored as a float literal
        return _Float(v)
    return obj


class _Float(float):
    def __repr__(self):
        return fmt(self)


def dumps(obj):
    """Serialize to JSON with sorted keys and 17-digit floats."""
    norm = _normalize(obj)
    return _dump(norm, 0) + "\n"


def _dump(o, level):
    pad = "  " * (level + 1)
    end = "  " * level
    if isinstance(o, dict):
        if not o:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_dump(o[k], level + 1)}" for k in sorted(o)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(o, list):
        if not o:
            return "[]"
        return "[\n" + ",\n".join(pad + _dump(v, level + 1) for v in o) + "\n" + end + "]"
    if isinstance(o, _Float):
        s = fmt(o)
        return s if ("e" in s or "." in s) else s + ".0"
    return json.dumps(o, ensure_ascii=False)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj))
