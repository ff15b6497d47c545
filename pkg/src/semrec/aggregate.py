"""Hyperedge reduction and assembly of the weighted unified adjacency matrix.

Every relationship type contributes its normalized adjacency, scaled by a
nonnegative per-relation weight, into one symmetric block matrix over all
entities. Relations of arity three or more are first reduced to binary ones,
either through auxiliary hub entities (star) or pairwise co-occurrence edges
(clique).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .graph import (
    EntityType,
    GraphError,
    RelationType,
    Schema,
    SemanticDataset,
    SparseMatrix,
    fmt_real,
)
from .normalize import NormalizationParams, apply as norm_apply, default_mode, fit as norm_fit

REDUCTION_MODES = ("star", "clique")


class AggregationError(GraphError):
    pass


class RelationshipWeights:
    """Per-relationship-type coefficients w_X; unnamed relations default to 1."""

    def __init__(self, weights: dict[str, float] | None = None):
        self._w: dict[str, float] = {}
        for name, value in (weights or {}).items():
            self.set(name, value)

    def set(self, rel: str, value: float) -> None:
        value = float(value)
        if not math.isfinite(value) or value < 0:
            raise AggregationError(f"weight for {rel!r} must be finite and >= 0, got {value}")
        self._w[str(rel)] = value

    def get(self, rel: str) -> float:
        return self._w.get(rel, 1.0)

    def as_dict(self) -> dict[str, float]:
        return dict(self._w)

    def copy(self) -> "RelationshipWeights":
        return RelationshipWeights(self._w)

    def scaled(self, factor: float, rel_names) -> "RelationshipWeights":
        """A copy with every named relation's weight multiplied by factor."""
        out = RelationshipWeights()
        for name in rel_names:
            out.set(name, self.get(name) * factor)
        return out

    def _effective(self) -> dict[str, float]:
        # entries at the default are indistinguishable from absent ones
        return {k: v for k, v in self._w.items() if v != 1.0}

    def __eq__(self, other) -> bool:
        return (isinstance(other, RelationshipWeights)
                and self._effective() == other._effective())

    def __repr__(self) -> str:
        return f"RelationshipWeights({self._w!r})"


def _known_relation(schema: Schema, name: str) -> bool:
    # weights learned on a reduced dataset are keyed by auxiliary relation
    # names; those belong to the schema as long as their base relation does
    if schema.has_relation(name):
        return True
    base, sep, _ = name.partition("#")
    return bool(sep) and schema.has_relation(base)


def load_weights(path, schema: Schema | None = None) -> RelationshipWeights:
    weights = RelationshipWeights()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            if len(tokens) != 2:
                raise AggregationError(f"{path}:{lineno}: expected 'relation weight'")
            name, value = tokens
            if schema is not None and not _known_relation(schema, name):
                raise AggregationError(f"{path}:{lineno}: unknown relationship type {name!r}")
            try:
                weights.set(name, float(value))
            except ValueError as exc:
                raise AggregationError(f"{path}:{lineno}: bad weight {value!r}") from None
    return weights


def save_weights(weights: RelationshipWeights, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name, value in weights.as_dict().items():
            fh.write(f"{name}\t{fmt_real(value)}\n")


# -- hyperedge reduction -----------------------------------------------------

def hub_type_name(rel: str) -> str:
    return f"{rel}#hub"


def spoke_rel_name(rel: str, etype: str) -> str:
    return f"{rel}#spoke:{etype}"


def pair_rel_name(rel: str, type_a: str, type_b: str) -> str:
    return f"{rel}#pair:{type_a}-{type_b}"


def is_auxiliary(name: str) -> bool:
    """True for entity/relationship types introduced by hyperedge reduction."""
    return "#" in name


def _copy_entities(src: SemanticDataset, dst: SemanticDataset) -> None:
    for etype in src.schema.entity_type_names():
        for entity_id in src.entity_ids(etype):
            dst.add_entity(etype, entity_id, src.entity_attrs(etype, entity_id))


def _copy_binary_edges(src: SemanticDataset, dst: SemanticDataset) -> None:
    for rel in src.schema.relation_types:
        if rel.arity != 2:
            continue
        for ids, weight, attrs in src.edges(rel.name):
            dst.add_edge(rel.name, ids, weight, attrs)


def reduce_hyperedges(dataset: SemanticDataset, mode: str = "star") -> SemanticDataset:
    """Rewrite arity->=3 relations as binary ones; pass binary datasets through.

    Star mode adds one auxiliary hub entity per hyperedge, linked to each
    endpoint by an unweighted spoke edge. Clique mode connects every endpoint
    pair directly; repeats of the same pair across hyperedges accumulate as a
    positive count. Hyperedge weights and attributes do not survive either
    reduction.
    """
    if mode not in REDUCTION_MODES:
        raise AggregationError(f"unknown reduction mode {mode!r}")
    schema = dataset.schema
    hyper = [rel for rel in schema.relation_types if rel.arity > 2]
    if not hyper:
        return dataset

    entity_types = list(schema.entity_types)
    relations = [rel for rel in schema.relation_types if rel.arity == 2]
    order = {name: i for i, name in enumerate(schema.entity_type_names())}

    def fresh(name: str) -> str:
        if schema.has_entity_type(name) or schema.has_relation(name):
            raise AggregationError(f"generated name {name!r} collides with the schema")
        return name

    if mode == "star":
        for rel in hyper:
            entity_types.append(EntityType(fresh(hub_type_name(rel.name))))
            seen: list[str] = []
            for etype in rel.endpoints:
                if etype not in seen:
                    seen.append(etype)
                    relations.append(RelationType(
                        fresh(spoke_rel_name(rel.name, etype)),
                        (hub_type_name(rel.name), etype), False, "unweighted"))
        reduced = SemanticDataset(Schema(entity_types, relations))
        _copy_entities(dataset, reduced)
        for rel in hyper:
            hub = hub_type_name(rel.name)
            for n, (ids, _w, _attrs) in enumerate(dataset.edges(rel.name)):
                hub_id = str(n)
                reduced.add_entity(hub, hub_id)
                for etype, entity_id in zip(rel.endpoints, ids):
                    reduced.add_edge(spoke_rel_name(rel.name, etype), (hub_id, entity_id))
    else:
        for rel in hyper:
            declared: set[str] = set()
            for pa in range(rel.arity):
                for pb in range(pa + 1, rel.arity):
                    ta, tb = sorted((rel.endpoints[pa], rel.endpoints[pb]),
                                    key=order.__getitem__)
                    name = pair_rel_name(rel.name, ta, tb)
                    if name not in declared:
                        declared.add(name)
                        relations.append(RelationType(
                            fresh(name), (ta, tb), ta == tb, "positive"))
        reduced = SemanticDataset(Schema(entity_types, relations))
        _copy_entities(dataset, reduced)
        counts: dict[tuple[str, str, str], int] = {}
        for rel in hyper:
            for ids, _w, _attrs in dataset.edges(rel.name):
                for pa in range(rel.arity):
                    for pb in range(pa + 1, rel.arity):
                        (ta, ia), (tb, ib) = sorted(
                            ((rel.endpoints[pa], ids[pa]), (rel.endpoints[pb], ids[pb])),
                            key=lambda pair: (order[pair[0]],))
                        if ta == tb:
                            if ia == ib:
                                continue  # an entity never co-occurs with itself
                            ia, ib = sorted((ia, ib),
                                            key=lambda x: dataset.entity_index(ta, x))
                        key = (pair_rel_name(rel.name, ta, tb), ia, ib)
                        counts[key] = counts.get(key, 0) + 1
        for (name, ia, ib), count in counts.items():
            reduced.add_edge(name, (ia, ib), float(count))
    _copy_binary_edges(dataset, reduced)
    return reduced


# -- assembly ----------------------------------------------------------------

@dataclass
class UnifiedMatrix:
    """The symmetric block matrix A over all entities of all types."""

    matrix: SparseMatrix
    offsets: dict[str, int]
    sizes: dict[str, int]
    provenance: list[tuple[str, str]] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.matrix.rows

    def row_of(self, etype: str, index: int) -> int:
        return self.offsets[etype] + index

    def type_of(self, row: int) -> str:
        return self.provenance[row][0]

    @classmethod
    def single_type(cls, matrix: SparseMatrix, etype: str = "node") -> "UnifiedMatrix":
        """Wrap a bare symmetric matrix as a one-entity-type unified matrix."""
        if matrix.rows != matrix.cols:
            raise AggregationError("unified matrix must be square")
        n = matrix.rows
        return cls(matrix, {etype: 0}, {etype: n},
                   [(etype, str(i)) for i in range(n)])


def entity_layout(dataset: SemanticDataset) -> tuple[dict[str, int], dict[str, int],
                                                     list[tuple[str, str]]]:
    """Row offsets, block sizes, and row->entity provenance in schema order."""
    offsets: dict[str, int] = {}
    sizes: dict[str, int] = {}
    provenance: list[tuple[str, str]] = []
    n = 0
    for etype in dataset.schema.entity_type_names():
        offsets[etype] = n
        sizes[etype] = dataset.entity_count(etype)
        n += sizes[etype]
        provenance.extend((etype, eid) for eid in dataset.entity_ids(etype))
    return offsets, sizes, provenance


def assemble(matrices: dict[str, SparseMatrix], dataset: SemanticDataset,
             weights: RelationshipWeights | None = None) -> UnifiedMatrix:
    """Sum weighted normalized relation blocks into one symmetric matrix.

    Each unordered cell pair is computed once and written to both (i, j) and
    (j, i), and relations are folded in schema declaration order, so the
    result is symmetric bitwise and reproducible. Zero-weight relations are
    skipped entirely; contributions from distinct relations on the same cell
    add up. Unipartite relations stored one-directionally are averaged with
    their transpose.
    """
    weights = weights or RelationshipWeights()
    schema = dataset.schema
    offsets, sizes, provenance = entity_layout(dataset)
    total = sum(sizes.values())

    if not any(weights.get(rel.name) > 0 for rel in schema.relation_types):
        raise AggregationError("all relationship weights are zero")

    unified = SparseMatrix(total, total)
    for rel in schema.relation_types:
        if rel.arity != 2:
            raise AggregationError(
                f"relationship {rel.name!r} has arity {rel.arity}; reduce hyperedges first")
        w = weights.get(rel.name)
        if w == 0.0:
            continue
        if rel.name not in matrices:
            raise AggregationError(f"no matrix supplied for relationship {rel.name!r}")
        mat = matrices[rel.name]
        ta, tb = rel.endpoints
        if (mat.rows, mat.cols) != (sizes[ta], sizes[tb]):
            raise AggregationError(
                f"relationship {rel.name!r}: matrix is {mat.rows}x{mat.cols}, "
                f"expected {sizes[ta]}x{sizes[tb]}")
        oa, ob = offsets[ta], offsets[tb]
        if not rel.unipartite:
            for i, j, v in mat.items():
                value = w * v
                unified.add(oa + i, ob + j, value)
                unified.add(ob + j, oa + i, value)
        elif rel.symmetric:
            # both directions are stored; use the lower triangle as canonical
            for i, j, v in mat.items():
                if i > j:
                    continue
                if i == j:
                    raise AggregationError(
                        f"relationship {rel.name!r}: diagonal entry ({i}, {i}) not allowed")
                if (j, i) not in mat:
                    raise AggregationError(
                        f"relationship {rel.name!r}: matrix pattern is not symmetric")
                value = w * v
                unified.add(oa + i, oa + j, value)
                unified.add(oa + j, oa + i, value)
        else:
            # fold the relation with its transpose: (M + M^T) / 2
            pair_sums: dict[tuple[int, int], float] = {}
            for i, j, v in mat.items():
                if i == j:
                    raise AggregationError(
                        f"relationship {rel.name!r}: diagonal entry ({i}, {i}) not allowed")
                key = (i, j) if i < j else (j, i)
                pair_sums[key] = pair_sums.get(key, 0.0) + v
            for (i, j), total_v in pair_sums.items():
                value = w * total_v / 2.0
                unified.add(oa + i, oa + j, value)
                unified.add(oa + j, oa + i, value)
    return UnifiedMatrix(unified, offsets, sizes, provenance)


def normalize_relations(dataset: SemanticDataset,
                        modes: dict[str, str] | None = None,
                        ) -> tuple[dict[str, SparseMatrix], dict[str, NormalizationParams]]:
    """Fit and apply per-relation normalization over a binary-only dataset.

    The mode defaults by weight range; an edgeless relation is forced to mode
    "none" since there is nothing to fit a baseline on.
    """
    modes = modes or {}
    matrices: dict[str, SparseMatrix] = {}
    params: dict[str, NormalizationParams] = {}
    for rel in dataset.schema.relation_types:
        raw = dataset.adjacency_matrix(rel.name)
        mode = modes.get(rel.name, default_mode(rel.weight_range))
        if raw.nnz == 0:
            mode = "none"
        p = norm_fit(raw, mode, rel=rel.name)
        matrices[rel.name] = norm_apply(raw, p)
        params[rel.name] = p
    return matrices, params


def build_unified(dataset: SemanticDataset,
                  weights: RelationshipWeights | None = None,
                  modes: dict[str, str] | None = None,
                  reduction: str = "star",
                  ) -> tuple[UnifiedMatrix, dict[str, NormalizationParams], SemanticDataset]:
    """Reduce, normalize, and assemble in one step."""
    reduced = reduce_hyperedges(dataset, reduction)
    matrices, params = normalize_relations(reduced, modes)
    return assemble(matrices, reduced, weights), params, reduced
