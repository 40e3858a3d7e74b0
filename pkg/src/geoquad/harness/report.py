"""Experiment reports and their CSV, JSON and SVG renderings."""

from dataclasses import dataclass, field
import csv
import io
import json
import math
import os

import numpy as np

SCHEMA_VERSION = "1.0"

_AXIS_SCHEMA = {
    "type": "object",
    "required": ["name", "values"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "values": {"type": "array", "items": {"type": "number"}},
    },
    "additionalProperties": False,
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "geoquad-report",
    "type": "object",
    "required": ["schema_version", "kind", "axes", "columns", "failed", "config", "metadata"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"type": "string"},
        "axes": {"type": "array", "items": _AXIS_SCHEMA},
        "columns": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": ["number", "null"]}},
        },
        "failed": {"type": "array", "items": {"type": "boolean"}},
        "config": {"type": "object"},
        "metadata": {"type": "object"},
        "children": {"type": "object", "additionalProperties": {"$ref": "#"}},
    },
    "additionalProperties": False,
}


@dataclass(eq=False)
class ExperimentReport:
    """Values on a rectangular grid.

    ``axes`` is a list of ``(name, values)`` pairs; every entry of
    ``columns`` is an array of shape ``shape``. ``failed`` flags cells whose
    computation raised; their values are NaN. ``timing`` holds wall-clock
    data and is kept out of the serialized form so outputs stay
    reproducible.
    """

    kind: str
    axes: list
    columns: dict
    failed: np.ndarray = None
    config: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    children: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def __post_init__(self):
        self.axes = [(str(n), np.asarray(v, dtype=float).reshape(-1)) for n, v in self.axes]
        shape = self.shape
        cols = {}
        for name, vals in self.columns.items():
            arr = np.asarray(vals, dtype=float)
            if arr.shape != shape:
                try:
                    arr = arr.reshape(shape)
                except ValueError:
                    raise ValueError(f"column {name!r} has shape {arr.shape}, expected {shape}") from None
            cols[name] = arr
        self.columns = cols
        if self.failed is None:
            self.failed = np.zeros(shape, dtype=bool)
        self.failed = np.asarray(self.failed, dtype=bool).reshape(shape)
        bad = np.zeros(shape, dtype=bool)
        for arr in cols.values():
            bad |= ~np.isfinite(arr)
        if np.any(bad & ~self.failed):
            raise ValueError("non-finite values in cells not flagged as failed")

    @property
    def shape(self):
        return tuple(len(v) for _, v in self.axes)

    @property
    def axis_names(self):
        return [n for n, _ in self.axes]

    def axis(self, name):
        for n, v in self.axes:
            if n == name:
                return v
        raise KeyError(name)

    def __eq__(self, other):
        if not isinstance(other, ExperimentReport):
            return NotImplemented
        return self.to_document() == other.to_document()

    def rows(self):
        """Flattened rows in C order: axis values followed by column values."""
        grids = np.meshgrid(*[v for _, v in self.axes], indexing="ij") if self.axes else []
        flat_axes = [g.reshape(-1) for g in grids]
        flat_cols = [c.reshape(-1) for c in self.columns.values()]
        n = int(np.prod(self.shape)) if self.axes else 0
        for i in range(n):
            yield [a[i] for a in flat_axes] + [c[i] for c in flat_cols]

    def to_document(self):
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "axes": [{"name": n, "values": [float(x) for x in v]} for n, v in self.axes],
            "columns": {k: [_json_number(x) for x in v.reshape(-1)] for k, v in self.columns.items()},
            "failed": [bool(x) for x in self.failed.reshape(-1)],
            "config": self.config,
            "metadata": self.metadata,
        }
        if self.children:
            doc["children"] = {k: c.to_document() for k, c in self.children.items()}
        return doc

    @classmethod
    def from_document(cls, doc):
        validate_document(doc)
        axes = [(a["name"], a["values"]) for a in doc["axes"]]
        shape = tuple(len(a["values"]) for a in doc["axes"])
        cols = {k: np.array([np.nan if x is None else x for x in v], dtype=float).reshape(shape)
                for k, v in doc["columns"].items()}
        children = {k: cls.from_document(c) for k, c in doc.get("children", {}).items()}
        return cls(doc["kind"], axes, cols, np.array(doc["failed"], dtype=bool).reshape(shape),
                   doc["config"], doc["metadata"], children)


def _json_number(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _fmt(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def validate_document(doc):
    import jsonschema

    jsonschema.validate(doc, REPORT_SCHEMA)
    shape = [len(a["values"]) for a in doc["axes"]]
    n = int(np.prod(shape)) if shape else 0
    for k, v in doc["columns"].items():
        if len(v) != n:
            raise jsonschema.ValidationError(f"column {k!r} has {len(v)} cells, expected {n}")
    if len(doc["failed"]) != n:
        raise jsonschema.ValidationError(f"failed mask has {len(doc['failed'])} cells, expected {n}")


def to_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(report.axis_names + list(report.columns))
    for row in report.rows():
        writer.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def to_json(report):
    doc = report.to_document()
    validate_document(doc)
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def load_json(path):
    with open(path, encoding="utf-8") as fh:
        return ExperimentReport.from_document(json.load(fh))


def emit(report, out_dir, stem, formats=("csv", "json", "svg")):
    """Write ``stem.<fmt>`` for each format; children go to ``stem-<child>.<fmt>``.

    Returns the list of written paths.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for fmt in formats:
        if fmt == "csv":
            text = to_csv(report)
        elif fmt == "json":
            text = to_json(report)
        elif fmt == "svg":
            from .plot import to_svg

            text = to_svg(report)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        path = os.path.join(out_dir, f"{stem}.{fmt}")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)
    for name, child in report.children.items():
        child_formats = [f for f in formats if f != "json"]
        written += emit(child, out_dir, f"{stem}-{name}", child_formats)
    return written
