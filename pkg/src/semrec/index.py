"""Top-k maximum-inner-product retrieval over latent entity vectors.

The index buckets entities with a recursive spherical k-means: vectors are
grouped by direction, every tree node keeps the normalized mean of its
members plus an angular radius and the member norm range.  Those four numbers
give an admissible upper bound on the inner product any member can reach with
a query, so a best-first search visits promising leaves first and can stop
early or on a candidate budget.  A flat scan (`brute_force_topk`) serves as
the exact reference.

Spectral weighting is folded into the indexed vectors (each stored row is
f(lambda) * v), so queries are plain inner products against raw model rows.
"""

from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .decompose import LatentModel, fmt_sig, model_text
from .graph import GraphError

INDEX_MAGIC = "semrec-index 1"
DEFAULT_BRANCHING = 8
DEFAULT_CAPACITY = 32
KMEANS_ITERATIONS = 25
# Added to every node radius so that rounding in arccos/cos can never make a
# bound claim less than a member's true score.
RADIUS_SLACK = 1e-9
# Beyond this depth the direction structure is degenerate; fall back to
# fixed-size chunks rather than recursing forever.
MAX_TREE_DEPTH = 60


class IndexingError(GraphError):
    pass


class StaleIndexError(IndexingError):
    """The index was built from a different model than the one supplied."""


def model_fingerprint(model: LatentModel) -> str:
    return hashlib.sha256(model_text(model).encode("utf-8")).hexdigest()


@dataclass
class IndexNode:
    centroid: np.ndarray  # unit direction; all-zero for the zero-vector leaf
    radius: float
    min_norm: float
    max_norm: float
    children: list["IndexNode"] = field(default_factory=list)
    members: np.ndarray | None = None  # leaf only: positions into the index

    @property
    def is_leaf(self) -> bool:
        return self.members is not None

    def count(self) -> int:
        if self.is_leaf:
            return len(self.members)
        return sum(child.count() for child in self.children)


@dataclass
class Recommendation:
    """Ranked (entity type, entity id, score) list.

    `truncated` flags that fewer than the requested k candidates existed;
    `scored` counts how many candidates were evaluated to produce the list.
    """

    entries: list[tuple[str, str, float]]
    truncated: bool = False
    scored: int = 0

    def ids(self) -> list[tuple[str, str]]:
        return [(etype, eid) for etype, eid, _ in self.entries]


@dataclass
class RecommenderIndex:
    etypes: tuple[str, ...]
    branching: int
    capacity: int
    rows: np.ndarray  # global model rows of the indexed entities, ascending
    ids: list[tuple[str, str]]
    vectors: np.ndarray  # kernel-scaled vectors, aligned with `rows`
    norms: np.ndarray
    root: IndexNode
    fingerprint: str
    _positions: dict[tuple[str, str], int] | None = field(
        default=None, repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.rows)

    def position_of(self, etype: str, entity_id: str) -> int | None:
        if self._positions is None:
            self._positions = {key: pos for pos, key in enumerate(self.ids)}
        return self._positions.get((etype, entity_id))

    def leaves(self) -> list[IndexNode]:
        out: list[IndexNode] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend(reversed(node.children))
        return out


# -- construction -------------------------------------------------------------


def _node_stats(positions: np.ndarray, units: np.ndarray,
                norms: np.ndarray) -> tuple[np.ndarray, float, float, float]:
    u = units[positions]
    mean = u.sum(axis=0)
    length = float(np.linalg.norm(mean))
    # opposing directions can cancel the mean; any unit reference still gives
    # a valid (if wide) radius, so fall back to the first member
    centroid = mean / length if length > 1e-12 else u[0].copy()
    dots = np.clip(u @ centroid, -1.0, 1.0)
    radius = float(np.arccos(float(dots.min()))) + RADIUS_SLACK
    block = norms[positions]
    return centroid, radius, float(block.min()), float(block.max())


def _zero_leaf(positions: np.ndarray, dim: int) -> IndexNode:
    return IndexNode(centroid=np.zeros(dim), radius=0.0, min_norm=0.0,
                     max_norm=0.0, members=positions)


def _spherical_kmeans(u: np.ndarray, b: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Cluster unit vectors by direction; returns the assignment array."""
    m = len(u)
    centroids = u[rng.choice(m, size=b, replace=False)].copy()
    assign = np.full(m, -1, dtype=np.intp)
    for _ in range(KMEANS_ITERATIONS):
        sims = u @ centroids.T
        new = np.argmax(sims, axis=1).astype(np.intp)
        for j in range(b):
            if not np.any(new == j):  # revive with the worst-served member
                worst = int(np.argmin(sims[np.arange(m), new]))
                new[worst] = j
                centroids[j] = u[worst]
        if np.array_equal(new, assign):
            break
        assign = new
        for j in range(b):
            members = u[assign == j]
            if not len(members):
                continue
            mean = members.sum(axis=0)
            length = np.linalg.norm(mean)
            if length > 1e-12:
                centroids[j] = mean / length
    return assign


def build_index(model: LatentModel, etypes, branching: int = DEFAULT_BRANCHING,
                capacity: int = DEFAULT_CAPACITY,
                seed: int = 0) -> RecommenderIndex:
    if isinstance(etypes, str):
        etypes = (etypes,)
    etypes = tuple(etypes)
    if not etypes:
        raise IndexingError("entity filter selects no entities")
    for etype in etypes:
        if etype not in model.offsets:
            raise IndexingError(f"model has no entity type {etype!r}")
    if branching < 2:
        raise IndexingError("branching must be at least 2")
    if capacity < 1:
        raise IndexingError("leaf capacity must be at least 1")

    rows = np.sort(np.concatenate([
        np.arange(model.offsets[t], model.offsets[t] + model.sizes[t])
        for t in etypes]))
    if not len(rows):
        raise IndexingError("entity filter selects no entities")
    ids = [model.provenance[r] for r in rows]
    vectors = model.vectors[rows] * model.kernel_values()
    norms = np.linalg.norm(vectors, axis=1)

    units = np.zeros_like(vectors)
    nonzero = norms > 0.0
    units[nonzero] = vectors[nonzero] / norms[nonzero, None]

    rng = np.random.default_rng(seed)

    def subtree(positions: np.ndarray, depth: int) -> IndexNode:
        centroid, radius, min_norm, max_norm = _node_stats(
            positions, units, norms)
        if len(positions) <= capacity:
            return IndexNode(centroid, radius, min_norm, max_norm,
                             members=positions)
        node = IndexNode(centroid, radius, min_norm, max_norm)
        b = min(branching, len(positions))
        groups: list[np.ndarray] = []
        if depth < MAX_TREE_DEPTH:
            assign = _spherical_kmeans(units[positions], b, rng)
            groups = [positions[assign == j] for j in range(b)]
            groups = [g for g in groups if len(g)]
        if len(groups) <= 1:
            # all one direction (or degenerate recursion): fixed-size chunks
            node.children = [
                IndexNode(*_node_stats(positions[i:i + capacity], units,
                                       norms),
                          members=positions[i:i + capacity])
                for i in range(0, len(positions), capacity)]
        else:
            node.children = [subtree(g, depth + 1) for g in groups]
        return node

    zero_positions = np.flatnonzero(~nonzero)
    nonzero_positions = np.flatnonzero(nonzero)
    zero_leaves = [
        _zero_leaf(zero_positions[i:i + capacity], model.k)
        for i in range(0, len(zero_positions), capacity)]

    if len(nonzero_positions):
        body = subtree(nonzero_positions, 0)
        if zero_leaves:
            root = IndexNode(body.centroid.copy(), body.radius,
                             0.0, body.max_norm,
                             children=[body, *zero_leaves])
        else:
            root = body
    elif zero_leaves:
        root = (zero_leaves[0] if len(zero_leaves) == 1 else
                IndexNode(np.zeros(model.k), 0.0, 0.0, 0.0,
                          children=zero_leaves))
    else:  # unreachable: rows is non-empty
        raise IndexingError("entity filter selects no entities")

    return RecommenderIndex(
        etypes=etypes, branching=branching, capacity=capacity, rows=rows,
        ids=ids, vectors=vectors, norms=norms, root=root,
        fingerprint=model_fingerprint(model))


# -- querying -----------------------------------------------------------------


def _resolve_source(source, model: LatentModel | None, dim: int) -> np.ndarray:
    looks_numeric = isinstance(source, np.ndarray) or (
        isinstance(source, (list, tuple)) and len(source) > 0
        and not isinstance(source[0], str))
    if looks_numeric:
        x = np.asarray(source, dtype=float)
        if x.shape != (dim,):
            raise IndexingError(
                f"query vector has {x.shape} entries, model has {dim}")
        if not np.all(np.isfinite(x)):
            raise IndexingError("query vector must be finite")
        return x
    if not (isinstance(source, tuple) and len(source) == 2):
        raise IndexingError(
            "source must be a latent vector or an (entity type, id) pair")
    if model is None:
        raise IndexingError("entity sources require the latent model")
    etype, eid = source
    if not model.has_entity(etype, eid):
        raise IndexingError(f"unknown source entity {etype}:{eid}")
    return model.vectors[model.row_of(etype, eid)].copy()


def _upper_bound(node: IndexNode, x: np.ndarray, xnorm: float) -> float:
    """Largest inner product any member of `node` can reach with x."""
    if xnorm == 0.0 or node.max_norm == 0.0:
        return 0.0
    cos_theta = min(1.0, max(-1.0, float(node.centroid @ x) / xnorm))
    turn = max(0.0, math.acos(cos_theta) - node.radius)
    reach = math.cos(turn)
    return xnorm * reach * (node.max_norm if reach >= 0.0 else node.min_norm)


def query(index: RecommenderIndex, source, k: int = 10,
          budget: int | None = None, exclusions=(),
          model: LatentModel | None = None) -> Recommendation:
    """Best-first top-k search; with budget >= index.size it is exact."""
    dim = index.vectors.shape[1]
    x = _resolve_source(source, model, dim)
    if k < 1:
        raise IndexingError("k must be at least 1")
    if budget is None:
        budget = max(index.size, k)
    if budget < k:
        raise IndexingError(f"budget {budget} is smaller than k={k}")

    excluded = set()
    for etype, eid in exclusions:
        pos = index.position_of(etype, eid)
        if pos is not None:
            excluded.add(pos)

    xnorm = float(np.linalg.norm(x))
    heap: list[tuple[float, int, IndexNode]] = []
    pushes = 0

    def push(node: IndexNode) -> None:
        nonlocal pushes
        heapq.heappush(heap, (-_upper_bound(node, x, xnorm), pushes, node))
        pushes += 1

    push(index.root)
    results: list[tuple[float, int]] = []  # (score, position)
    kth: list[float] = []  # min-heap of the best k scores so far
    scored = 0
    while heap and scored < budget:
        negative_bound, _, node = heapq.heappop(heap)
        if len(kth) == k and -negative_bound < kth[0]:
            break  # strict: bound ties may still hide equal-score winners
        if not node.is_leaf:
            for child in node.children:
                push(child)
            continue
        members = node.members
        if excluded:
            mask = np.fromiter((p not in excluded for p in members),
                               dtype=bool, count=len(members))
            members = members[mask]
        if not len(members):
            continue
        members = members[:budget - scored]
        # row-at-a-time dot products: the result for a candidate must not
        # depend on which other candidates share its batch, or full-budget
        # searches could disagree with the flat scan by an ulp
        scores = [float(np.dot(index.vectors[position], x))
                  for position in members]
        scored += len(members)
        for position, score in zip(members, scores):
            results.append((score, int(position)))
            if len(kth) < k:
                heapq.heappush(kth, float(score))
            elif score > kth[0]:
                heapq.heapreplace(kth, float(score))

    results.sort(key=lambda item: (-item[0], item[1]))
    entries = [(*index.ids[position], score)
               for score, position in results[:k]]
    return Recommendation(entries=entries, truncated=len(entries) < k,
                          scored=scored)


def brute_force_topk(model: LatentModel, source, k: int = 10, exclusions=(),
                     etypes=None) -> Recommendation:
    """Exact top-k by scanning every filtered entity; the reference answer."""
    if etypes is None:
        etypes = tuple(model.offsets)
    elif isinstance(etypes, str):
        etypes = (etypes,)
    for etype in etypes:
        if etype not in model.offsets:
            raise IndexingError(f"model has no entity type {etype!r}")
    rows = np.sort(np.concatenate([
        np.arange(model.offsets[t], model.offsets[t] + model.sizes[t])
        for t in etypes]))
    x = _resolve_source(source, model, model.k)
    if k < 1:
        raise IndexingError("k must be at least 1")

    excluded = {(etype, eid) for etype, eid in exclusions}
    keep = np.array([model.provenance[r] not in excluded for r in rows],
                    dtype=bool)
    rows = rows[keep]
    # scored row-at-a-time like the tree search, so both routes produce
    # bitwise-identical values; the ranking (full lexsort scan) stays
    # independent of the best-first traversal
    base = model.vectors[rows] * model.kernel_values()
    scores = np.fromiter((np.dot(base[i], x) for i in range(len(rows))),
                         dtype=float, count=len(rows))
    order = np.lexsort((rows, -scores))[:k]
    entries = [(*model.provenance[rows[i]], float(scores[i])) for i in order]
    return Recommendation(entries=entries, truncated=len(entries) < k,
                          scored=len(rows))


def measure_recall(index: RecommenderIndex, model: LatentModel, queries,
                   k: int = 10, budget: int | None = None) -> float:
    """Mean fraction of the exact top-k the budgeted search recovers."""
    queries = list(queries)
    if not queries:
        raise IndexingError("measure_recall needs at least one query")
    total = 0.0
    for source in queries:
        exact = brute_force_topk(model, source, k, etypes=index.etypes)
        approx = query(index, source, k, budget=budget, model=model)
        wanted = set(exact.ids())
        got = set(approx.ids())
        total += len(wanted & got) / len(wanted)
    return total / len(queries)


# -- index file ---------------------------------------------------------------


def save_index(index: RecommenderIndex, path) -> None:
    lines = [INDEX_MAGIC,
             f"branching {index.branching}",
             f"capacity {index.capacity}",
             f"model {index.fingerprint}",
             "etypes " + " ".join(index.etypes),
             "rows " + " ".join(str(int(r)) for r in index.rows)]

    def emit(node: IndexNode) -> None:
        stats = (f"{fmt_sig(node.radius)} {fmt_sig(node.min_norm)} "
                 f"{fmt_sig(node.max_norm)} "
                 + " ".join(fmt_sig(c) for c in node.centroid))
        if node.is_leaf:
            members = " ".join(str(int(p)) for p in node.members)
            lines.append(f"leaf {len(node.members)} {stats} : {members}")
        else:
            lines.append(f"internal {len(node.children)} {stats}")
            for child in node.children:
                emit(child)

    emit(index.root)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_index(path, model: LatentModel,
               require_match: bool = True) -> RecommenderIndex:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != INDEX_MAGIC:
        raise IndexingError(f"{path}: not an index file")

    header: dict[str, str] = {}
    body_start = 1
    for i, line in enumerate(lines[1:], start=1):
        key, _, rest = line.partition(" ")
        if key in {"branching", "capacity", "model", "etypes", "rows"}:
            header[key] = rest
            body_start = i + 1
        else:
            break
    missing = {"branching", "capacity", "model", "etypes", "rows"} - set(header)
    if missing:
        raise IndexingError(f"{path}: missing header fields {sorted(missing)}")

    fingerprint = header["model"]
    if require_match and fingerprint != model_fingerprint(model):
        raise StaleIndexError(
            f"{path} was built from a different model; rebuild the index")

    etypes = tuple(header["etypes"].split())
    rows = np.array([int(tok) for tok in header["rows"].split()], dtype=int)
    if len(rows) and int(rows.max()) >= model.n:
        raise IndexingError(f"{path}: row numbers exceed the model size")
    dim = model.k

    it = iter(lines[body_start:])

    def read_node() -> IndexNode:
        try:
            parts = next(it).split()
        except StopIteration:
            raise IndexingError(f"{path}: truncated node list") from None
        tag, count = parts[0], int(parts[1])
        radius, min_norm, max_norm = (float(parts[2]), float(parts[3]),
                                      float(parts[4]))
        centroid = np.array([float(tok) for tok in parts[5:5 + dim]])
        if len(centroid) != dim:
            raise IndexingError(f"{path}: centroid dimension mismatch")
        if tag == "internal":
            node = IndexNode(centroid, radius, min_norm, max_norm)
            node.children = [read_node() for _ in range(count)]
            return node
        if tag == "leaf":
            tail = parts[5 + dim:]
            if not tail or tail[0] != ":":
                raise IndexingError(f"{path}: malformed leaf line")
            members = np.array([int(tok) for tok in tail[1:]], dtype=int)
            if len(members) != count:
                raise IndexingError(f"{path}: leaf member count mismatch")
            return IndexNode(centroid, radius, min_norm, max_norm,
                             members=members)
        raise IndexingError(f"{path}: unknown node tag {tag!r}")

    root = read_node()
    ids = [model.provenance[r] for r in rows]
    vectors = model.vectors[rows] * model.kernel_values()
    norms = np.linalg.norm(vectors, axis=1)
    return RecommenderIndex(
        etypes=etypes, branching=int(header["branching"]),
        capacity=int(header["capacity"]), rows=rows, ids=ids,
        vectors=vectors, norms=norms, root=root, fingerprint=fingerprint)
