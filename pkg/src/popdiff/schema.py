"""Categorical schema, one-hot codec, and population CSV I/O.

A population is a table of records over D categorical attributes.  Each
attribute owns a contiguous span of a global category vocabulary of size K
(the sum of per-attribute category counts), and a record is stored as a
D-tuple of *global* category indices.  The one-hot encoding of a record is a
D x K matrix whose row d is the indicator of the record's category for
attribute d.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ioutil import atomic_write_text

__all__ = [
    "SchemaError",
    "UndecodableSample",
    "AttributeSchema",
    "Population",
    "build_schema",
    "encode_record",
    "encode_population",
    "decode_matrix",
    "decode_batch",
    "load_population_csv",
    "save_population_csv",
]

Record = tuple[int, ...]


class SchemaError(ValueError):
    """Raised for malformed schemas, records, or population tables."""


class UndecodableSample(ValueError):
    """Raised when global-argmax decoding lands outside an attribute's span."""


@dataclass(frozen=True)
class AttributeSchema:
    """Immutable attribute/category layout for one population.

    ``categories[d]`` lists attribute d's category labels in first-appearance
    order; the global vocabulary concatenates those lists, so attribute d owns
    the half-open index span ``spans[d] = (start, stop)``.
    """

    names: tuple[str, ...]
    categories: tuple[tuple[str, ...], ...]
    spans: tuple[tuple[int, int], ...] = field(init=False)
    # per-attribute {label: global index}, for encoding
    _lookup: tuple[dict[str, int], ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.names) == 0:
            raise SchemaError("schema needs at least one attribute")
        if len(self.names) != len(self.categories):
            raise SchemaError(
                f"{len(self.names)} attribute names but "
                f"{len(self.categories)} category lists"
            )
        if len(set(self.names)) != len(self.names):
            raise SchemaError("duplicate attribute names")
        spans: list[tuple[int, int]] = []
        lookup: list[dict[str, int]] = []
        start = 0
        for name, cats in zip(self.names, self.categories):
            if len(cats) == 0:
                raise SchemaError(f"attribute {name!r} has no categories")
            if len(set(cats)) != len(cats):
                raise SchemaError(f"attribute {name!r} has duplicate categories")
            stop = start + len(cats)
            spans.append((start, stop))
            lookup.append({c: start + i for i, c in enumerate(cats)})
            start = stop
        object.__setattr__(self, "spans", tuple(spans))
        object.__setattr__(self, "_lookup", tuple(lookup))

    @property
    def num_attributes(self) -> int:
        return len(self.names)

    @property
    def num_categories(self) -> int:
        return self.spans[-1][1]

    def attribute_of(self, global_index: int) -> int:
        """Attribute owning a global category index."""
        if not 0 <= global_index < self.num_categories:
            raise SchemaError(f"global category index {global_index} out of range")
        for d, (start, stop) in enumerate(self.spans):
            if global_index < stop:
                return d
        raise AssertionError("unreachable")

    def label_of(self, global_index: int) -> str:
        d = self.attribute_of(global_index)
        start, _ = self.spans[d]
        return self.categories[d][global_index - start]

    def global_index(self, attribute: int, label: str) -> int:
        try:
            return self._lookup[attribute][label]
        except KeyError:
            raise SchemaError(
                f"unknown category {label!r} for attribute "
                f"{self.names[attribute]!r}"
            ) from None

    def validate_record(self, record: Record) -> None:
        if len(record) != self.num_attributes:
            raise SchemaError(
                f"record has {len(record)} values, schema has "
                f"{self.num_attributes} attributes"
            )
        for d, (g, (start, stop)) in enumerate(zip(record, self.spans)):
            if not start <= g < stop:
                raise SchemaError(
                    f"record value {g} for attribute {self.names[d]!r} is "
                    f"outside its span [{start}, {stop})"
                )

    def record_labels(self, record: Record) -> tuple[str, ...]:
        self.validate_record(record)
        return tuple(self.label_of(g) for g in record)

    def record_from_labels(self, labels: tuple[str, ...] | list[str]) -> Record:
        if len(labels) != self.num_attributes:
            raise SchemaError(
                f"{len(labels)} labels for {self.num_attributes} attributes"
            )
        return tuple(self.global_index(d, lab) for d, lab in enumerate(labels))

    def to_json_dict(self) -> dict:
        return {
            "attributes": [
                {"name": n, "categories": list(c)}
                for n, c in zip(self.names, self.categories)
            ]
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "AttributeSchema":
        try:
            attrs = obj["attributes"]
            names = tuple(a["name"] for a in attrs)
            cats = tuple(tuple(a["categories"]) for a in attrs)
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema JSON: {exc}") from exc
        return cls(names=names, categories=cats)

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AttributeSchema":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class Population:
    """A schema plus a list of records (global-index tuples)."""

    schema: AttributeSchema
    records: tuple[Record, ...]

    def __post_init__(self) -> None:
        for r in self.records:
            self.schema.validate_record(r)

    def __len__(self) -> int:
        return len(self.records)


def build_schema(
    rows: list[list[str]], names: list[str] | None = None
) -> AttributeSchema:
    """Infer a schema from raw string rows.

    Categories are ordered by first appearance down each column.  ``names``
    defaults to ``col0, col1, ...``.
    """
    if len(rows) == 0:
        raise SchemaError("cannot build a schema from an empty table")
    width = len(rows[0])
    if width == 0:
        raise SchemaError("cannot build a schema from zero-width rows")
    if names is None:
        names = [f"col{d}" for d in range(width)]
    if len(names) != width:
        raise SchemaError(f"{len(names)} names for {width} columns")
    seen: list[dict[str, None]] = [dict() for _ in range(width)]  # ordered sets
    for r, row in enumerate(rows):
        if len(row) != width:
            raise SchemaError(
                f"row {r + 1} has {len(row)} values, expected {width}"
            )
        for d, value in enumerate(row):
            if value == "":
                raise SchemaError(
                    f"row {r + 1}, attribute {names[d]!r}: empty value"
                )
            seen[d].setdefault(value)
    return AttributeSchema(
        names=tuple(names),
        categories=tuple(tuple(s.keys()) for s in seen),
    )


def encode_record(
    record: Record, schema: AttributeSchema, dtype=np.float64
) -> np.ndarray:
    """One-hot encode a record as a D x K matrix."""
    schema.validate_record(record)
    out = np.zeros((schema.num_attributes, schema.num_categories), dtype=dtype)
    out[np.arange(schema.num_attributes), list(record)] = 1.0
    return out


def encode_population(pop: Population, dtype=np.float64) -> np.ndarray:
    """One-hot encode all records as an N x D x K array."""
    if len(pop) == 0:
        raise SchemaError("cannot encode an empty population")
    idx = np.asarray(pop.records, dtype=np.int64)
    n, d = idx.shape
    out = np.zeros((n, d, pop.schema.num_categories), dtype=dtype)
    out[np.arange(n)[:, None], np.arange(d)[None, :], idx] = 1.0
    return out


def _check_matrix(matrix: np.ndarray, schema: AttributeSchema) -> np.ndarray:
    m = np.asarray(matrix)
    expect = (schema.num_attributes, schema.num_categories)
    if m.shape != expect:
        raise SchemaError(f"matrix shape {m.shape} does not match schema {expect}")
    return m


def decode_matrix(
    matrix: np.ndarray, schema: AttributeSchema, mode: str = "masked"
) -> Record:
    """Decode a real-valued D x K matrix back to a record.

    ``masked`` takes each row's argmax within the owning attribute's span, so
    every matrix decodes.  ``global`` takes the unrestricted row argmax and
    raises :class:`UndecodableSample` if it falls outside the span.  Ties
    resolve to the lowest index in both modes.
    """
    m = _check_matrix(matrix, schema)
    if mode not in ("masked", "global"):
        raise ValueError(f"unknown decode mode {mode!r}")
    record = []
    for d, (start, stop) in enumerate(schema.spans):
        if mode == "masked":
            g = start + int(np.argmax(m[d, start:stop]))
        else:
            g = int(np.argmax(m[d]))
            if not start <= g < stop:
                raise UndecodableSample(
                    f"attribute {schema.names[d]!r}: global argmax {g} is "
                    f"outside span [{start}, {stop})"
                )
        record.append(g)
    return tuple(record)


def decode_batch(
    matrices: np.ndarray, schema: AttributeSchema, mode: str = "masked"
) -> tuple[Population, int]:
    """Decode an N x D x K batch; returns the population and the number of
    samples dropped as undecodable (always 0 in masked mode)."""
    arr = np.asarray(matrices)
    if arr.ndim != 3:
        raise SchemaError(f"expected an N x D x K array, got shape {arr.shape}")
    records = []
    dropped = 0
    for i in range(arr.shape[0]):
        try:
            records.append(decode_matrix(arr[i], schema, mode=mode))
        except UndecodableSample:
            dropped += 1
    return Population(schema=schema, records=tuple(records)), dropped


def load_population_csv(
    path: str | Path, schema: AttributeSchema | None = None
) -> Population:
    """Load a population from a headered CSV of category labels.

    Without ``schema``, one is inferred from the file (header = attribute
    names, categories in first-appearance order).  With ``schema``, the header
    must match its attribute names and every value must be a known category;
    violations raise :class:`SchemaError` naming the row and attribute.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    if schema is None:
        schema = build_schema(rows, names=header)
    elif tuple(header) != schema.names:
        raise SchemaError(
            f"{path}: header {header!r} does not match schema attributes "
            f"{list(schema.names)!r}"
        )
    records = []
    for r, row in enumerate(rows):
        if len(row) != schema.num_attributes:
            raise SchemaError(
                f"{path}: row {r + 1} has {len(row)} values, expected "
                f"{schema.num_attributes}"
            )
        try:
            records.append(schema.record_from_labels(row))
        except SchemaError as exc:
            raise SchemaError(f"{path}: row {r + 1}: {exc}") from None
    return Population(schema=schema, records=tuple(records))


def save_population_csv(pop: Population, path: str | Path) -> None:
    """Write a population as a headered CSV of category labels (atomically)."""
    buf = io.StringIO(newline="")
    writer = csv.writer(buf)
    writer.writerow(pop.schema.names)
    for record in pop.records:
        writer.writerow(pop.schema.record_labels(record))
    atomic_write_text(path, buf.getvalue())
