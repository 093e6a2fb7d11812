"""Canonical, byte-stable serialization of plain records.

The audit chain hashes these bytes, and the determinism guarantees
(identical chain heads across runs and platforms) rest on this module, so
the rendering rules are fixed:

* mapping keys sorted lexicographically, no whitespace,
* reals rendered with 17 significant digits (``%.17g``), which round-trips
  IEEE-754 doubles exactly,
* strings JSON-escaped with ``ensure_ascii``,
* non-finite reals are rejected — callers must sanitize first.

``canonical_json(json.loads(canonical_json(x))) == canonical_json(x)`` holds
for every accepted value (a float that prints integral, e.g. 1.0 -> "1",
parses back as int but re-renders to the same bytes).
"""

import json
import math

_ESCAPE = json.JSONEncoder(ensure_ascii=True).encode


def _render(value, out):
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite real not representable: {value!r}")
        if value == 0.0:
            value = 0.0  # normalize -0.0 so rendering round-trips
        out.append(f"{value:.17g}")
    elif isinstance(value, str):
        out.append(_ESCAPE(value))
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _render(item, out)
        out.append("]")
    elif isinstance(value, dict):
        out.append("{")
        for i, key in enumerate(sorted(value)):
            if not isinstance(key, str):
                raise ValueError(f"mapping keys must be strings, got {key!r}")
            if i:
                out.append(",")
            out.append(_ESCAPE(key))
            out.append(":")
            _render(value[key], out)
        out.append("}")
    else:
        raise ValueError(f"unsupported type for canonical form: {type(value)!r}")


def canonical_json(value) -> str:
    """Render ``value`` to its canonical textual form."""
    out = []
    _render(value, out)
    return "".join(out)


def sanitize(value):
    """Deep-copy ``value`` mapping non-finite reals to None and numpy
    scalars to builtins.

    Monitors legitimately produce NaN for insufficient signals; audit
    payloads pass through here before hashing.
    """
    if isinstance(value, dict):
        return {k: sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [sanitize(v) for v in value]
    if not isinstance(value, (type(None), bool, int, float, str)):
        item = getattr(value, "item", None)
        if item is not None:  # numpy scalar or 0-d array
            value = item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value
