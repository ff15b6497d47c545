"""Held-out link prediction and coordinate-descent weight search.

The relative importance of each relationship type is learned by withholding a
fraction of one target relation's edges, rebuilding the model under candidate
weight vectors, and keeping whichever candidate predicts the withheld edges
best. The search is a plain per-relation grid sweep, repeated for a few
passes, with every evaluation logged so the result can be audited from the
trace alone.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .aggregate import (
    RelationshipWeights,
    assemble,
    reduce_hyperedges,
)
from .decompose import ConvergenceError, KernelSpec, LatentModel, decompose
from .graph import GraphError, SemanticDataset, fmt_real
from .normalize import MODES, apply as norm_apply, default_mode, fit as norm_fit

_log = logging.getLogger(__name__)

METRICS = ("auc", "precision_at_k", "rmse")
LOWER_IS_BETTER = frozenset({"rmse"})

DEFAULT_GRID = (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)
MIN_TARGET_EDGES = 10


class LearnError(ValueError):
    pass


@dataclass
class HoldoutSplit:
    """A train dataset plus the withheld target edges and sampled non-edges.

    The train dataset keeps every entity of the original (so row layouts
    stay aligned); only the sampled target edges are removed.
    """

    target: str
    train: SemanticDataset
    test_edges: list[tuple[tuple[str, str], float]]
    negatives: list[tuple[str, str]]


@dataclass
class SearchSpec:
    """Knobs of the weight search."""

    grid: tuple[float, ...] = DEFAULT_GRID
    metric: str = "auc"
    passes: int = 2
    seed: int = 0
    holdout_fraction: float = 0.2
    k: int = 16
    tol: float = 1e-8
    max_iter: int | None = None
    kernel: KernelSpec = field(default_factory=KernelSpec)
    reduction: str = "star"
    precision_k: int = 10
    search_modes: bool = False

    def validate(self) -> None:
        if self.metric not in METRICS:
            raise LearnError(f"unknown metric {self.metric!r}")
        if not self.grid or any(w < 0 or not math.isfinite(w) for w in self.grid):
            raise LearnError("weight grid values must be finite and >= 0")
        if self.passes < 1:
            raise LearnError("passes must be >= 1")
        if not 0 < self.holdout_fraction < 1:
            raise LearnError("holdout fraction must be in (0, 1)")


@dataclass
class TraceRow:
    sweep: int
    relation: str
    weight: float
    metric: float
    mode: str | None = None


@dataclass
class LearnResult:
    weights: RelationshipWeights
    score: float
    trace: list[TraceRow]
    modes: dict[str, str] = field(default_factory=dict)


def save_trace(trace: list[TraceRow], path, include_modes: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_trace(trace, include_modes))


def format_trace(trace: list[TraceRow], include_modes: bool = False) -> str:
    header = "pass\trelation\tweight\tmetric"
    if include_modes:
        header += "\tmode"
    lines = [header]
    for row in trace:
        line = f"{row.sweep}\t{row.relation}\t{fmt_real(row.weight)}\t{fmt_real(row.metric)}"
        if include_modes:
            line += f"\t{row.mode or ''}"
        lines.append(line)
    return "\n".join(lines) + "\n"


# -- holdout construction ----------------------------------------------------

def split_holdout(dataset: SemanticDataset, target: str, fraction: float,
                  seed: int = 0) -> HoldoutSplit:
    """Withhold a uniform fraction of the target relation's edges.

    Negatives are drawn uniformly over the target endpoint-type pairs that
    carry no edge in the full dataset, one per withheld edge.
    """
    rel = dataset.schema.relation(target)
    if rel.arity != 2:
        raise LearnError(f"target relationship {target!r} must be binary")
    if not 0 < fraction < 1:
        raise LearnError("holdout fraction must be in (0, 1)")
    edges = [(ids, w) for ids, w, _attrs in dataset.edges(target)]
    if len(edges) < MIN_TARGET_EDGES:
        raise LearnError(
            f"target relationship {target!r} has {len(edges)} edges; "
            f"need at least {MIN_TARGET_EDGES}")
    rng = np.random.default_rng(seed)
    n_test = int(len(edges) * fraction)
    if n_test >= len(edges):
        raise LearnError("holdout would leave no training edges")
    picked = set(rng.choice(len(edges), size=n_test, replace=False).tolist())

    train = SemanticDataset(dataset.schema)
    for etype in dataset.schema.entity_type_names():
        for entity_id in dataset.entity_ids(etype):
            train.add_entity(etype, entity_id, dataset.entity_attrs(etype, entity_id))
    for rel_type in dataset.schema.relation_types:
        if rel_type.name == target:
            continue
        for ids, w, attrs in dataset.edges(rel_type.name):
            train.add_edge(rel_type.name, ids, w, attrs)
    test_edges: list[tuple[tuple[str, str], float]] = []
    for pos, (ids, w) in enumerate(edges):
        if pos in picked:
            test_edges.append((ids, w))
        else:
            train.add_edge(target, ids, w)

    negatives = _sample_negatives(dataset, rel, n_test, rng)
    return HoldoutSplit(target, train, test_edges, negatives)


def _sample_negatives(dataset: SemanticDataset, rel, count: int,
                      rng: np.random.Generator) -> list[tuple[str, str]]:
    ta, tb = rel.endpoints
    ids_a = dataset.entity_ids(ta)
    ids_b = dataset.entity_ids(tb)
    negatives: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    attempts = 0
    cap = 100 * count + 1000
    while len(negatives) < count:
        attempts += 1
        if attempts > cap:
            raise LearnError(
                f"could not sample {count} negatives for {rel.name!r}; "
                "the relation is too dense")
        a = ids_a[int(rng.integers(0, len(ids_a)))]
        b = ids_b[int(rng.integers(0, len(ids_b)))]
        if rel.unipartite:
            if a == b:
                continue
            if rel.symmetric and dataset.entity_index(ta, b) < dataset.entity_index(ta, a):
                a, b = b, a
        pair = (a, b)
        if pair in seen or dataset.has_edge(rel.name, pair):
            continue
        seen.add(pair)
        negatives.append(pair)
    return negatives


# -- metrics -----------------------------------------------------------------

def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_values = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _pair_scores(model: LatentModel, pairs, ta: str, tb: str) -> np.ndarray:
    if not pairs:
        return np.zeros(0)
    rows_a = np.array([model.row_of(ta, a) for a, _ in pairs])
    rows_b = np.array([model.row_of(tb, b) for _, b in pairs])
    f = model.kernel_values()
    return np.einsum("ij,ij->i",
                     model.vectors[rows_a] * f, model.vectors[rows_b])


def auc_from_scores(pos: np.ndarray, neg: np.ndarray) -> float:
    """Probability a random positive outscores a random negative, ties half.

    Computed through midranks, which is the same quantity in O(n log n).
    """
    pos = np.asarray(pos, dtype=float)
    neg = np.asarray(neg, dtype=float)
    if len(pos) == 0 or len(neg) == 0:
        raise LearnError("auc needs at least one positive and one negative")
    ranks = _midranks(np.concatenate([pos, neg]))
    n_pos, n_neg = len(pos), len(neg)
    return float((ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _auc(model: LatentModel, split: HoldoutSplit, ta: str, tb: str) -> float:
    pos = _pair_scores(model, [ids for ids, _ in split.test_edges], ta, tb)
    neg = _pair_scores(model, split.negatives, ta, tb)
    return auc_from_scores(pos, neg)


def _positives_by_source(split: HoldoutSplit, symmetric_unipartite: bool):
    train_pos: dict[str, set[str]] = {}
    test_pos: dict[str, set[str]] = {}
    for ids, _w, _attrs in split.train.edges(split.target):
        a, b = ids
        train_pos.setdefault(a, set()).add(b)
        if symmetric_unipartite:
            train_pos.setdefault(b, set()).add(a)
    for (a, b), _w in split.test_edges:
        test_pos.setdefault(a, set()).add(b)
        if symmetric_unipartite:
            test_pos.setdefault(b, set()).add(a)
    return train_pos, test_pos


def _precision_at_k(model: LatentModel, split: HoldoutSplit, ta: str, tb: str,
                    k: int) -> float:
    rel = split.train.schema.relation(split.target)
    sym_uni = rel.unipartite and rel.symmetric
    train_pos, test_pos = _positives_by_source(split, sym_uni)
    candidate_ids = split.train.entity_ids(tb)
    rows_b = np.array([model.row_of(tb, x) for x in candidate_ids])
    vectors_b = model.vectors[rows_b]
    f = model.kernel_values()
    precisions = []
    for source, wanted in test_pos.items():
        query = model.vectors[model.row_of(ta, source)] * f
        scores = vectors_b @ query
        order = np.lexsort((np.arange(len(scores)), -scores))
        banned = train_pos.get(source, set())
        hits = 0
        taken = 0
        for pos in order:
            candidate = candidate_ids[pos]
            if candidate in banned or (rel.unipartite and candidate == source):
                continue
            if candidate in wanted:
                hits += 1
            taken += 1
            if taken == k:
                break
        precisions.append(hits / k)
    return float(np.mean(precisions))


def _rmse(model: LatentModel, split: HoldoutSplit, ta: str, tb: str) -> float:
    total = 0.0
    for (a, b), truth in split.test_edges:
        predicted = model.predict((ta, a), (tb, b), denormalize_rel=split.target)
        total += (predicted - truth) ** 2
    return math.sqrt(total / len(split.test_edges))


def evaluate(model: LatentModel, split: HoldoutSplit, metric: str = "auc",
             precision_k: int = 10) -> float:
    """Score a model against the withheld edges.

    auc ranks withheld edges against sampled non-edges (ties count half);
    precision_at_k inspects each test source's top-k list with its training
    neighbors excluded; rmse compares denormalized predictions with the
    withheld weights.
    """
    if metric not in METRICS:
        raise LearnError(f"unknown metric {metric!r}")
    if not split.test_edges:
        raise LearnError("empty test set")
    ta, tb = split.train.schema.relation(split.target).endpoints
    if metric == "auc":
        return _auc(model, split, ta, tb)
    if metric == "precision_at_k":
        return _precision_at_k(model, split, ta, tb, precision_k)
    return _rmse(model, split, ta, tb)


def _improves(candidate: float, incumbent: float | None, metric: str) -> bool:
    if math.isnan(candidate):
        return False
    if incumbent is None or math.isnan(incumbent):
        return True
    if metric in LOWER_IS_BETTER:
        return candidate < incumbent
    return candidate > incumbent


# -- the search --------------------------------------------------------------

def learn_weights(dataset: SemanticDataset, target: str,
                  spec: SearchSpec | None = None) -> LearnResult:
    """Coordinate-descent grid search over per-relation weights.

    One holdout split is drawn up front; every candidate re-assembles and
    re-decomposes the training matrix. Relations are swept in schema order
    (the target itself stays anchored at weight 1), candidate weights rise
    through the grid, and only a strict improvement moves the incumbent, so
    ties resolve toward the smaller weight. Candidates whose decomposition
    fails to converge are logged with a NaN metric and skipped.
    """
    spec = spec or SearchSpec()
    spec.validate()
    split = split_holdout(dataset, target, spec.holdout_fraction, spec.seed)
    reduced = reduce_hyperedges(split.train, spec.reduction)
    schema = reduced.schema
    if not schema.has_relation(target):
        raise LearnError(f"target relationship {target!r} was reduced away")
    relations = {r.name: r.endpoints for r in schema.relation_types}

    raw = {r.name: reduced.adjacency_matrix(r.name) for r in schema.relation_types}
    normalized_cache: dict[tuple[str, str], tuple] = {}

    def normalized(rel_name: str, mode: str):
        matrix = raw[rel_name]
        if matrix.nnz == 0:
            mode = "none"
        key = (rel_name, mode)
        if key not in normalized_cache:
            params = norm_fit(matrix, mode, rel=rel_name)
            normalized_cache[key] = (norm_apply(matrix, params), params)
        return normalized_cache[key]

    modes = {r.name: default_mode(r.weight_range) for r in schema.relation_types}
    weights = RelationshipWeights()
    for name in relations:
        weights.set(name, 1.0)
    weights.set(target, 1.0)

    def run_candidate(candidate_weights: RelationshipWeights,
                      candidate_modes: dict[str, str]) -> float:
        matrices = {}
        params = {}
        for name in relations:
            matrices[name], params[name] = normalized(name, candidate_modes[name])
        unified = assemble(matrices, reduced, candidate_weights)
        model = decompose(unified, k=min(spec.k, unified.n), tol=spec.tol,
                          max_iter=spec.max_iter, seed=spec.seed,
                          kernel=spec.kernel, relations=relations,
                          weights=candidate_weights, norm_params=params)
        return evaluate(model, split, spec.metric, spec.precision_k)

    trace: list[TraceRow] = []
    best = run_candidate(weights, modes)
    trace.append(TraceRow(0, target, 1.0, best, modes[target] if spec.search_modes else None))

    sweep_rels = [name for name in relations if name != target]
    for sweep in range(1, spec.passes + 1):
        for rel_name in sweep_rels:
            current_w = weights.get(rel_name)
            weight_candidates = sorted(set(spec.grid) | {current_w})
            mode_candidates = list(MODES) if spec.search_modes else [modes[rel_name]]
            chosen_w, chosen_mode = current_w, modes[rel_name]
            coord_best: float | None = None
            for mode in mode_candidates:
                for w in weight_candidates:
                    candidate_weights = weights.copy()
                    candidate_weights.set(rel_name, w)
                    candidate_modes = dict(modes)
                    candidate_modes[rel_name] = mode
                    try:
                        score = run_candidate(candidate_weights, candidate_modes)
                    except ConvergenceError as exc:
                        _log.warning("skipping %s weight %g mode %s: %s",
                                     rel_name, w, mode, exc)
                        score = math.nan
                    trace.append(TraceRow(sweep, rel_name, w, score,
                                          mode if spec.search_modes else None))
                    # strict improvement within the coordinate: among equal
                    # scores the smallest weight (and earliest mode) sticks
                    if _improves(score, coord_best, spec.metric):
                        coord_best = score
                        chosen_w, chosen_mode = w, mode
            weights.set(rel_name, chosen_w)
            modes[rel_name] = chosen_mode
            if coord_best is not None and _improves(coord_best, best, spec.metric):
                best = coord_best

    return LearnResult(weights, best, trace, modes)
