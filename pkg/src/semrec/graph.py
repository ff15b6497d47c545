"""Typed semantic datasets: schemas, entities, weighted edges, adjacency extraction.

A dataset is a set of typed entities plus typed relationship edges. Every
relationship type declares its endpoint entity types (arity >= 2), whether it
is symmetric, and the range of weights it admits. Binary relations can be
extracted as sparse adjacency matrices over dense per-type entity indexes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

WEIGHT_RANGES = ("unweighted", "positive", "signed", "weighted")

#: Reserved first column marking an entity declaration row in an edge file.
ENTITY_MARKER = "@entity"


class GraphError(ValueError):
    """Invalid schema or dataset content."""


class ParseError(GraphError):
    """Malformed schema or edge file, with the offending location."""

    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


def fmt_real(x: float) -> str:
    """Serialize a real as decimal text that reparses to the same float."""
    return repr(float(x))


@dataclass(frozen=True)
class EntityType:
    name: str
    description: str = ""


@dataclass(frozen=True)
class RelationType:
    name: str
    endpoints: tuple[str, ...]
    symmetric: bool
    weight_range: str

    @property
    def arity(self) -> int:
        return len(self.endpoints)

    @property
    def unipartite(self) -> bool:
        return self.arity == 2 and self.endpoints[0] == self.endpoints[1]


class Schema:
    """Declared entity types and relationship types, in declaration order."""

    def __init__(self, entity_types: Iterable[EntityType], relation_types: Iterable[RelationType]):
        self.entity_types: list[EntityType] = list(entity_types)
        self.relation_types: list[RelationType] = list(relation_types)
        self._etypes = {e.name: e for e in self.entity_types}
        self._rels = {r.name: r for r in self.relation_types}
        if len(self._etypes) != len(self.entity_types):
            raise GraphError("duplicate entity type name")
        if len(self._rels) != len(self.relation_types):
            raise GraphError("duplicate relationship type name")
        for rel in self.relation_types:
            if rel.arity < 2:
                raise GraphError(f"relationship {rel.name!r}: arity must be >= 2")
            if rel.weight_range not in WEIGHT_RANGES:
                raise GraphError(f"relationship {rel.name!r}: unknown weight range {rel.weight_range!r}")
            for ep in rel.endpoints:
                if ep not in self._etypes:
                    raise GraphError(f"relationship {rel.name!r}: unknown endpoint entity type {ep!r}")

    def entity_type_names(self) -> list[str]:
        return [e.name for e in self.entity_types]

    def has_entity_type(self, name: str) -> bool:
        return name in self._etypes

    def relation(self, name: str) -> RelationType:
        try:
            return self._rels[name]
        except KeyError:
            raise GraphError(f"unknown relationship type {name!r}") from None

    def has_relation(self, name: str) -> bool:
        return name in self._rels

    def __eq__(self, other) -> bool:
        if not isinstance(other, Schema):
            return NotImplemented
        return (self.entity_types == other.entity_types
                and self.relation_types == other.relation_types)

    def to_text(self) -> str:
        lines = []
        for e in self.entity_types:
            lines.append(f"ENTITY {e.name}" + (f" {e.description}" if e.description else ""))
        for r in self.relation_types:
            sym = "symmetric" if r.symmetric else "asymmetric"
            lines.append(f"REL {r.name} {' '.join(r.endpoints)} {r.weight_range} {sym}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())


def load_schema(path) -> Schema:
    """Parse a schema file: ENTITY and REL lines, '#' comments.

    REL lines read ``REL <name> <etype>+ <weight-range> <symmetric|asymmetric>``;
    an ENTITY line may carry a free-text description after the name.
    """
    entity_types: list[EntityType] = []
    relation_types: list[RelationType] = []
    seen_entities: set[str] = set()
    seen_rels: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            kind = tokens[0]
            if kind == "ENTITY":
                if len(tokens) < 2:
                    raise ParseError(path, lineno, "ENTITY needs a name")
                name = tokens[1]
                if name in seen_entities:
                    raise ParseError(path, lineno, f"duplicate entity type {name!r}")
                seen_entities.add(name)
                entity_types.append(EntityType(name, " ".join(tokens[2:])))
            elif kind == "REL":
                if len(tokens) < 6:
                    raise ParseError(path, lineno, "REL needs a name, >=2 endpoint types, a weight range and a symmetry")
                name = tokens[1]
                if name in seen_rels:
                    raise ParseError(path, lineno, f"duplicate relationship type {name!r}")
                weight_range, sym = tokens[-2], tokens[-1]
                if weight_range not in WEIGHT_RANGES:
                    raise ParseError(path, lineno, f"unknown weight range {weight_range!r}")
                if sym not in ("symmetric", "asymmetric"):
                    raise ParseError(path, lineno, f"expected 'symmetric' or 'asymmetric', got {sym!r}")
                endpoints = tuple(tokens[2:-2])
                for ep in endpoints:
                    if ep not in seen_entities:
                        raise ParseError(path, lineno, f"relationship {name!r}: unknown endpoint entity type {ep!r}")
                seen_rels.add(name)
                relation_types.append(RelationType(name, endpoints, sym == "symmetric", weight_range))
            else:
                raise ParseError(path, lineno, f"unknown directive {kind!r}")
    return Schema(entity_types, relation_types)


class SparseMatrix:
    """Real sparse matrix keyed by (row, col), insertion ordered.

    At most one value per position; re-setting a position overwrites in place.
    Explicit zeros are representable: normalization keeps observed entries in
    the pattern even when their transformed value is 0.
    """

    __slots__ = ("rows", "cols", "_data")

    def __init__(self, rows: int, cols: int, entries: Iterable[tuple[int, int, float]] = ()):
        self.rows = int(rows)
        self.cols = int(cols)
        self._data: dict[tuple[int, int], float] = {}
        for r, c, v in entries:
            self.set(r, c, v)

    def _check(self, r: int, c: int) -> None:
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise GraphError(f"index ({r}, {c}) out of range for {self.rows}x{self.cols} matrix")

    def set(self, r: int, c: int, v: float) -> None:
        self._check(r, c)
        self._data[(r, c)] = float(v)

    def add(self, r: int, c: int, v: float) -> None:
        self._check(r, c)
        key = (r, c)
        self._data[key] = self._data.get(key, 0.0) + float(v)

    def get(self, r: int, c: int, default: float = 0.0) -> float:
        return self._data.get((r, c), default)

    def __contains__(self, pos: tuple[int, int]) -> bool:
        return pos in self._data

    @property
    def nnz(self) -> int:
        return len(self._data)

    def items(self) -> Iterator[tuple[int, int, float]]:
        for (r, c), v in self._data.items():
            yield r, c, v

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Entries as (rows, cols, values) int64/int64/float64 arrays."""
        if not self._data:
            return (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))
        keys = np.array(list(self._data.keys()), dtype=np.int64)
        vals = np.array(list(self._data.values()), dtype=np.float64)
        return keys[:, 0], keys[:, 1], vals

    def transpose(self) -> "SparseMatrix":
        out = SparseMatrix(self.cols, self.rows)
        for r, c, v in self.items():
            out.set(c, r, v)
        return out

    def frobenius_norm(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self._data.values()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (self.rows, self.cols) == (other.rows, other.cols) and self._data == other._data

    def __repr__(self) -> str:
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"


def _validate_weight(rel: RelationType, weight: float | None) -> float:
    if weight is None:
        weight = 1.0
    weight = float(weight)
    if not math.isfinite(weight):
        raise GraphError(f"relationship {rel.name!r}: weight must be finite")
    rng = rel.weight_range
    if rng == "unweighted" and weight != 1.0:
        raise GraphError(f"relationship {rel.name!r} is unweighted; weight must be 1, got {weight}")
    if rng == "positive" and weight <= 0.0:
        raise GraphError(f"relationship {rel.name!r} admits only positive weights, got {weight}")
    if rng == "signed" and weight not in (-1.0, 1.0):
        raise GraphError(f"relationship {rel.name!r} admits only weights -1 or +1, got {weight}")
    return weight


class SemanticDataset:
    """Entities per type plus weighted edges per relationship type.

    Entity identifiers are opaque strings mapped to dense integer indexes per
    type in first-seen order; edges auto-register unseen endpoints. Immutable
    by convention once loading finishes.
    """

    def __init__(self, schema: Schema):
        self.schema = schema
        # etype -> {id -> attrs dict}; insertion order defines the index
        self._entities: dict[str, dict[str, dict[str, str]]] = {
            e.name: {} for e in schema.entity_types
        }
        self._index: dict[str, dict[str, int]] = {e.name: {} for e in schema.entity_types}
        # rel -> {endpoint id tuple -> (weight, attrs)}
        self._edges: dict[str, dict[tuple[str, ...], tuple[float, dict[str, str]]]] = {
            r.name: {} for r in schema.relation_types
        }

    # -- entities ----------------------------------------------------------

    def add_entity(self, etype: str, entity_id: str, attrs: dict[str, str] | None = None) -> int:
        if etype not in self._entities:
            raise GraphError(f"unknown entity type {etype!r}")
        table = self._entities[etype]
        if entity_id not in table:
            self._index[etype][entity_id] = len(table)
            table[entity_id] = {}
        if attrs:
            table[entity_id].update(attrs)
        return self._index[etype][entity_id]

    def has_entity(self, etype: str, entity_id: str) -> bool:
        return etype in self._entities and entity_id in self._entities[etype]

    def entity_ids(self, etype: str) -> list[str]:
        if etype not in self._entities:
            raise GraphError(f"unknown entity type {etype!r}")
        return list(self._entities[etype])

    def entity_count(self, etype: str) -> int:
        return len(self._entities[etype])

    def entity_index(self, etype: str, entity_id: str) -> int:
        try:
            return self._index[etype][entity_id]
        except KeyError:
            raise GraphError(f"unknown entity {etype}:{entity_id}") from None

    def entity_attrs(self, etype: str, entity_id: str) -> dict[str, str]:
        return self._entities[etype][entity_id]

    # -- edges -------------------------------------------------------------

    def _canonical_endpoints(self, rel: RelationType, ids: tuple[str, ...]) -> tuple[str, ...]:
        # Symmetric unipartite edges are stored with the lower entity index
        # first so (a, b) and (b, a) are one edge.
        if rel.unipartite and rel.symmetric:
            i, j = (self.entity_index(rel.endpoints[0], x) for x in ids)
            if j < i:
                return (ids[1], ids[0])
        return ids

    def add_edge(self, rel_name: str, ids: Iterable[str], weight: float | None = None,
                 attrs: dict[str, str] | None = None) -> None:
        if rel_name not in self._edges:
            raise GraphError(f"unknown relationship type {rel_name!r}")
        rel = self.schema.relation(rel_name)
        ids = tuple(str(x) for x in ids)
        if len(ids) != rel.arity:
            raise GraphError(
                f"relationship {rel_name!r} expects {rel.arity} endpoints, got {len(ids)}")
        if rel.unipartite and ids[0] == ids[1]:
            raise GraphError(f"relationship {rel_name!r}: self-loop {ids[0]!r} rejected")
        w = _validate_weight(rel, weight)
        for etype, entity_id in zip(rel.endpoints, ids):
            self.add_entity(etype, entity_id)
        key = self._canonical_endpoints(rel, ids)
        self._edges[rel_name][key] = (w, dict(attrs) if attrs else {})

    def edges(self, rel_name: str) -> Iterator[tuple[tuple[str, ...], float, dict[str, str]]]:
        if rel_name not in self._edges:
            raise GraphError(f"unknown relationship type {rel_name!r}")
        for key, (w, attrs) in self._edges[rel_name].items():
            yield key, w, attrs

    def edge_count(self, rel_name: str) -> int:
        return len(self._edges[rel_name])

    def has_edge(self, rel_name: str, ids: tuple[str, ...]) -> bool:
        rel = self.schema.relation(rel_name)
        table = self._edges[rel_name]
        if rel.unipartite and rel.symmetric:
            if ids in table:
                return True
            return (ids[1], ids[0]) in table
        return ids in table

    # -- views -------------------------------------------------------------

    def adjacency_matrix(self, rel_name: str) -> SparseMatrix:
        """Sparse adjacency of a binary relation over per-type indexes.

        Symmetric unipartite relations emit both (i, j) and (j, i); edges
        whose weight is exactly zero are dropped.
        """
        rel = self.schema.relation(rel_name)
        if rel.arity != 2:
            raise GraphError(
                f"relationship {rel_name!r} has arity {rel.arity}; reduce hyperedges first")
        ta, tb = rel.endpoints
        mat = SparseMatrix(self.entity_count(ta), self.entity_count(tb))
        for (a, b), w, _attrs in self.edges(rel_name):
            if w == 0.0:
                continue
            i = self.entity_index(ta, a)
            j = self.entity_index(tb, b)
            mat.set(i, j, w)
            if rel.unipartite and rel.symmetric:
                mat.set(j, i, w)
        return mat

    def stats(self) -> dict[str, dict[str, int]]:
        return {
            "entities": {e.name: self.entity_count(e.name) for e in self.schema.entity_types},
            "edges": {r.name: self.edge_count(r.name) for r in self.schema.relation_types},
        }

    def __eq__(self, other) -> bool:
        if not isinstance(other, SemanticDataset):
            return NotImplemented
        if self.schema != other.schema:
            return False
        if self._entities != other._entities:
            return False
        return self._edges == other._edges

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        """Write the canonical edge file; load(save(d)) == d."""
        with open(path, "w", encoding="utf-8") as fh:
            for etype in self.schema.entity_type_names():
                for entity_id, attrs in self._entities[etype].items():
                    cols = [ENTITY_MARKER, etype, entity_id]
                    cols += [f"{k}={v}" for k, v in sorted(attrs.items())]
                    fh.write("\t".join(cols) + "\n")
            for rel in self.schema.relation_types:
                for key, (w, attrs) in self._edges[rel.name].items():
                    cols = [rel.name, *key]
                    if rel.weight_range != "unweighted":
                        cols.append(fmt_real(w))
                    cols += [f"{k}={v}" for k, v in sorted(attrs.items())]
                    fh.write("\t".join(cols) + "\n")


def _parse_attr(token: str) -> tuple[str, str]:
    k, _, v = token.partition("=")
    return k, v


def load_dataset(schema: Schema, path) -> SemanticDataset:
    """Load an edge file against a schema.

    Rows are whitespace-separated: ``rel_name endpoints... [weight] [key=value...]``.
    Rows whose first column is ``@entity`` declare an entity (with optional
    attributes) without requiring any edge.
    """
    ds = SemanticDataset(schema)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if tokens[0] == ENTITY_MARKER:
                if len(tokens) < 3:
                    raise ParseError(path, lineno, f"{ENTITY_MARKER} needs a type and an id")
                etype, entity_id = tokens[1], tokens[2]
                if not schema.has_entity_type(etype):
                    raise ParseError(path, lineno, f"unknown entity type {etype!r}")
                attrs = dict(_parse_attr(t) for t in tokens[3:])
                ds.add_entity(etype, entity_id, attrs)
                continue
            rel_name = tokens[0]
            if not schema.has_relation(rel_name):
                raise ParseError(path, lineno, f"unknown relationship type {rel_name!r}")
            rel = schema.relation(rel_name)
            if len(tokens) < 1 + rel.arity:
                raise ParseError(path, lineno,
                                 f"relationship {rel_name!r} expects {rel.arity} endpoint columns")
            ids = tuple(tokens[1:1 + rel.arity])
            rest = tokens[1 + rel.arity:]
            weight: float | None = None
            attrs: dict[str, str] = {}
            for pos, token in enumerate(rest):
                if "=" in token:
                    k, v = _parse_attr(token)
                    attrs[k] = v
                elif pos == 0 and weight is None:
                    try:
                        weight = float(token)
                    except ValueError:
                        raise ParseError(path, lineno, f"bad weight {token!r}") from None
                else:
                    raise ParseError(path, lineno, f"unexpected column {token!r}")
            try:
                ds.add_edge(rel_name, ids, weight, attrs)
            except GraphError as exc:
                raise ParseError(path, lineno, str(exc)) from None
    return ds


def save_dataset(dataset: SemanticDataset, path) -> None:
    dataset.save(path)
