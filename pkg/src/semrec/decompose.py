"""Truncated spectral model of the unified adjacency matrix.

The model holds the top-k eigenpairs of the symmetric unified matrix, ranked
by absolute eigenvalue so that strongly negative structure (signed relations,
bipartite parity) is retained. Eigenpairs come from restarted Lanczos
iteration with full reorthogonalization and Rayleigh-Ritz extraction; spectral
kernels are applied lazily to the eigenvalues at prediction time, so swapping
kernels never requires re-decomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .aggregate import RelationshipWeights, UnifiedMatrix
from .graph import GraphError, SparseMatrix
from .normalize import NormalizationParams, denormalize, params_from_lines, params_to_lines

KERNEL_KINDS = ("truncated", "exponential", "von_neumann", "polynomial")

MAX_POLYNOMIAL_DEGREE = 8
MODEL_MAGIC = "semrec-model 1"
BREAKDOWN_EPS = 1e-10


def fmt_sig(x: float) -> str:
    """Decimal text with 17 significant digits; round-trips to the same float."""
    return format(float(x), ".17g")


class DecompositionError(ValueError):
    pass


class ConvergenceError(DecompositionError):
    """Iteration budget exhausted; carries what was achieved (and, for
    updates, the previous model so callers can keep serving it)."""

    def __init__(self, message: str, residuals: np.ndarray | None = None,
                 stale_model: "LatentModel | None" = None):
        super().__init__(message)
        self.residuals = residuals
        self.stale_model = stale_model


class KernelError(ValueError):
    pass


# -- spectral kernels --------------------------------------------------------

@dataclass(frozen=True)
class KernelSpec:
    """A spectrum transfer function f applied to the eigenvalues.

    truncated: f(x) = x; exponential: f(x) = exp(alpha x);
    von_neumann: f(x) = 1 / (1 - alpha x); polynomial: f(x) = sum c_p x^p.
    """

    kind: str = "truncated"
    alpha: float = 0.0
    coefficients: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise KernelError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "polynomial":
            if not self.coefficients:
                raise KernelError("polynomial kernel needs coefficients")
            if len(self.coefficients) > MAX_POLYNOMIAL_DEGREE + 1:
                raise KernelError(
                    f"polynomial kernel degree is capped at {MAX_POLYNOMIAL_DEGREE}")
        if not math.isfinite(self.alpha):
            raise KernelError("kernel alpha must be finite")

    def validate_spectrum(self, eigenvalues: np.ndarray) -> None:
        if self.kind == "von_neumann" and len(eigenvalues):
            reach = abs(self.alpha) * float(np.max(np.abs(eigenvalues)))
            if reach >= 1.0:
                raise KernelError(
                    f"von_neumann kernel diverges: |alpha|*max|eigenvalue| = {reach:.6g} >= 1")

    def apply(self, eigenvalues: np.ndarray) -> np.ndarray:
        lam = np.asarray(eigenvalues, dtype=float)
        if self.kind == "truncated":
            return lam.copy()
        if self.kind == "exponential":
            return np.exp(self.alpha * lam)
        if self.kind == "von_neumann":
            self.validate_spectrum(lam)
            return 1.0 / (1.0 - self.alpha * lam)
        out = np.zeros_like(lam)
        for c in reversed(self.coefficients):  # Horner
            out = out * lam + c
        return out

    def format(self) -> str:
        if self.kind == "truncated":
            return "truncated"
        if self.kind == "polynomial":
            return "polynomial:" + ",".join(fmt_sig(c) for c in self.coefficients)
        return f"{self.kind}:{fmt_sig(self.alpha)}"

    @staticmethod
    def parse(text: str) -> "KernelSpec":
        kind, _, arg = text.strip().partition(":")
        if kind == "truncated":
            if arg:
                raise KernelError("truncated kernel takes no parameter")
            return KernelSpec("truncated")
        if kind in ("exponential", "von_neumann"):
            if not arg:
                raise KernelError(f"{kind} kernel needs alpha, e.g. {kind}:0.5")
            try:
                return KernelSpec(kind, alpha=float(arg))
            except ValueError:
                raise KernelError(f"bad kernel alpha {arg!r}") from None
        if kind == "polynomial":
            try:
                coeffs = tuple(float(c) for c in arg.split(",") if c != "")
            except ValueError:
                raise KernelError(f"bad polynomial coefficients {arg!r}") from None
            return KernelSpec(kind, coefficients=coeffs)
        raise KernelError(f"unknown kernel kind {kind!r}")


# -- the latent model --------------------------------------------------------

@dataclass
class LatentModel:
    """Top-k eigenpairs of the unified matrix plus everything needed to score.

    Eigenvalues are stored raw; the kernel transforms them on the fly. Offsets
    and provenance give every entity its row; normalization parameters and
    relation weights allow mapping scores back to original rating scales.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    kernel: KernelSpec = KernelSpec("truncated")
    offsets: dict[str, int] = field(default_factory=dict)
    sizes: dict[str, int] = field(default_factory=dict)
    provenance: list[tuple[str, str]] = field(default_factory=list)
    relations: dict[str, tuple[str, str]] = field(default_factory=dict)
    weights: RelationshipWeights = field(default_factory=RelationshipWeights)
    norm_params: dict[str, NormalizationParams] = field(default_factory=dict)

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != len(self.eigenvalues):
            raise DecompositionError("vectors must be N x k for k eigenvalues")
        self._row_index: dict[tuple[str, str], int] | None = None

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    def kernel_values(self) -> np.ndarray:
        return self.kernel.apply(self.eigenvalues)

    def row_of(self, etype: str, entity_id: str) -> int:
        if self._row_index is None:
            self._row_index = {key: row for row, key in enumerate(self.provenance)}
        try:
            return self._row_index[(etype, entity_id)]
        except KeyError:
            raise GraphError(f"unknown entity {etype}:{entity_id}") from None

    def has_entity(self, etype: str, entity_id: str) -> bool:
        if self._row_index is None:
            self._row_index = {key: row for row, key in enumerate(self.provenance)}
        return (etype, entity_id) in self._row_index

    def score_rows(self, row_a: int, row_b: int) -> float:
        f = self.kernel_values()
        return float(np.dot(self.vectors[row_a] * f, self.vectors[row_b]))

    def predict(self, a: tuple[str, str], b: tuple[str, str],
                denormalize_rel: str | None = None) -> float:
        """Latent inner-product score for an entity pair, O(k) per call."""
        row_a = self.row_of(*a)
        row_b = self.row_of(*b)
        score = self.score_rows(row_a, row_b)
        if denormalize_rel is None:
            return score
        return self._denormalize(score, a, b, denormalize_rel)

    def _denormalize(self, score: float, a, b, rel: str) -> float:
        if rel not in self.relations:
            raise GraphError(f"model has no relationship {rel!r}")
        ta, tb = self.relations[rel]
        if (a[0], b[0]) == (ta, tb):
            row_ent, col_ent = a, b
        elif (b[0], a[0]) == (ta, tb):
            row_ent, col_ent = b, a
        else:
            raise GraphError(
                f"relationship {rel!r} connects {ta}-{tb}, not {a[0]}-{b[0]}")
        w = self.weights.get(rel)
        if w == 0.0:
            raise GraphError(f"relationship {rel!r} has weight 0; nothing to invert")
        params = self.norm_params.get(rel)
        raw = score / w
        if params is None or params.mode == "none":
            return raw
        return denormalize(raw, params,
                           row=self.row_of(*row_ent) - self.offsets[ta],
                           col=self.row_of(*col_ent) - self.offsets[tb])


def apply_kernel(model: LatentModel, spec: KernelSpec) -> LatentModel:
    """The same factors under a different spectrum transfer function."""
    spec.validate_spectrum(model.eigenvalues)
    return replace(model, kernel=spec)


# -- Lanczos iteration -------------------------------------------------------

def _matvec_operator(matrix: SparseMatrix):
    rows, cols, values = matrix.to_arrays()
    n = matrix.rows

    def matvec(x: np.ndarray) -> np.ndarray:
        if len(values) == 0:
            return np.zeros(n)
        # bincount accumulates in fixed array order: deterministic
        return np.bincount(rows, weights=values * x[cols], minlength=n)

    return matvec


def _orthogonalize(candidate: np.ndarray, basis: np.ndarray, t: int) -> np.ndarray:
    for _ in range(2):  # twice is enough (Kahan)
        candidate = candidate - basis[:, :t] @ (basis[:, :t].T @ candidate)
    return candidate


def _order_by_magnitude(theta: np.ndarray) -> np.ndarray:
    # descending |value|; exact magnitude ties broken toward the positive one
    return np.lexsort((-theta, -np.abs(theta)))


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for col in range(out.shape[1]):
        v = out[:, col]
        peak = np.max(np.abs(v)) if len(v) else 0.0
        if peak == 0.0:
            continue
        nonzero = np.nonzero(np.abs(v) > 1e-12 * peak)[0]
        if len(nonzero) and v[nonzero[0]] < 0:
            out[:, col] = -v
    return out


def _lanczos_topk(matvec, n: int, k: int, tol: float, max_restarts: int,
                  seed: int, scale: float,
                  warm_basis: np.ndarray | None = None):
    """Top-k eigenpairs by |eigenvalue| of a symmetric operator.

    Builds an orthonormal subspace by a fully reorthogonalized Krylov chain,
    extracts Ritz pairs from the dense projected matrix, and restarts from the
    best Ritz vectors plus the worst residual direction until every retained
    pair satisfies ||A v - lambda v|| <= tol * scale.
    """
    rng = np.random.default_rng(seed)
    m = min(n, max(2 * k + 1, k + 12))
    basis = np.zeros((n, m))
    images = np.zeros((n, m))  # images[:, i] = A @ basis[:, i]

    def random_unit(t: int) -> np.ndarray:
        for _ in range(20):
            cand = _orthogonalize(rng.standard_normal(n), basis, t)
            norm = np.linalg.norm(cand)
            if norm > BREAKDOWN_EPS:
                return cand / norm
        raise DecompositionError("could not draw a vector outside the current subspace")

    # seed the subspace
    filled = 0
    if warm_basis is not None:
        for col in range(warm_basis.shape[1]):
            if filled >= m:
                break
            cand = _orthogonalize(warm_basis[:, col].copy(), basis, filled)
            norm = np.linalg.norm(cand)
            if norm > BREAKDOWN_EPS:
                basis[:, filled] = cand / norm
                filled += 1
    if filled == 0:
        basis[:, 0] = random_unit(0)
        filled = 1
    for col in range(filled):
        images[:, col] = matvec(basis[:, col])

    pending_seed: np.ndarray | None = None
    last_residuals: np.ndarray | None = None
    for _restart in range(max_restarts):
        # expand the subspace by a reorthogonalized Krylov chain
        t = filled
        while t < m:
            if pending_seed is not None:
                cand = pending_seed
                pending_seed = None
            else:
                cand = images[:, t - 1].copy()
            cand = _orthogonalize(cand, basis, t)
            norm = np.linalg.norm(cand)
            if norm <= BREAKDOWN_EPS * max(scale, 1.0):
                basis[:, t] = random_unit(t)
            else:
                basis[:, t] = cand / norm
            images[:, t] = matvec(basis[:, t])
            t += 1

        projected = basis.T @ images
        projected = (projected + projected.T) / 2.0
        theta, s = np.linalg.eigh(projected)
        order = _order_by_magnitude(theta)
        top = order[:k]
        ritz_vectors = basis @ s[:, top]
        ritz_images = images @ s[:, top]
        residual_vectors = ritz_images - ritz_vectors * theta[top]
        residuals = np.linalg.norm(residual_vectors, axis=0)
        last_residuals = residuals
        if np.all(residuals <= tol * max(scale, 0.0) + 1e-300):
            return theta[top].copy(), ritz_vectors, residuals

        # thick restart: keep extra Ritz vectors, then push the worst
        # unconverged residual direction in first
        keep = min(m - 1, k + 4) if m > 1 else m
        keep = max(keep, 1)
        kept = order[:keep]
        new_basis = basis @ s[:, kept]
        new_images = images @ s[:, kept]
        basis[:, :keep] = new_basis
        images[:, :keep] = new_images
        basis[:, keep:] = 0.0
        images[:, keep:] = 0.0
        filled = keep
        worst = int(np.argmax(residuals))
        pending_seed = residual_vectors[:, worst].copy()

    achieved = ("none attempted" if last_residuals is None
                else f"worst residual {float(np.max(last_residuals)):.3e}")
    raise ConvergenceError(
        f"no convergence after {max_restarts} restarts; {achieved} "
        f"(target {tol * scale:.3e})",
        residuals=last_residuals)


def frobenius_scale(matrix: SparseMatrix) -> float:
    return matrix.frobenius_norm()


def decompose(unified: UnifiedMatrix, k: int = 32, tol: float = 1e-8,
              max_iter: int | None = None, seed: int = 0,
              kernel: KernelSpec = KernelSpec("truncated"),
              relations: dict[str, tuple[str, str]] | None = None,
              weights: RelationshipWeights | None = None,
              norm_params: dict[str, NormalizationParams] | None = None,
              ) -> LatentModel:
    """Top-k spectral model of the unified matrix.

    Deterministic for a fixed seed; eigenvalues ordered by descending
    magnitude; each vector's first significant component is made positive so
    repeated runs are bit-identical.
    """
    n = unified.n
    if k < 1:
        raise DecompositionError("k must be >= 1")
    if k > n:
        raise DecompositionError(f"k = {k} exceeds the {n} entities")
    max_restarts = max_iter if max_iter is not None else 10 * k
    matvec = _matvec_operator(unified.matrix)
    scale = frobenius_scale(unified.matrix)
    eigenvalues, vectors, _ = _lanczos_topk(
        matvec, n, k, tol, max_restarts, seed, scale)
    return LatentModel(
        eigenvalues=eigenvalues,
        vectors=_fix_signs(vectors),
        kernel=kernel,
        offsets=dict(unified.offsets),
        sizes=dict(unified.sizes),
        provenance=list(unified.provenance),
        relations=dict(relations or {}),
        weights=(weights or RelationshipWeights()).copy(),
        norm_params=dict(norm_params or {}),
    )


def residual_norms(model: LatentModel, unified: UnifiedMatrix) -> np.ndarray:
    """||A v_i - lambda_i v_i||_2 for every retained eigenpair."""
    matvec = _matvec_operator(unified.matrix)
    out = np.zeros(model.k)
    for i in range(model.k):
        v = model.vectors[:, i]
        out[i] = np.linalg.norm(matvec(v) - model.eigenvalues[i] * v)
    return out


def update(model: LatentModel, unified: UnifiedMatrix, tol: float = 1e-8,
           max_iter: int | None = None, seed: int = 0,
           relations: dict[str, tuple[str, str]] | None = None,
           weights: RelationshipWeights | None = None,
           norm_params: dict[str, NormalizationParams] | None = None,
           ) -> LatentModel:
    """Re-fit the model against a changed matrix, warm-starting from the old one.

    Old vectors are remapped to the new row layout by entity identity (new
    entities start at zero). If the old eigenpairs already satisfy the
    residual tolerance on the new matrix, the model is returned unchanged
    apart from its entity bookkeeping; otherwise Lanczos restarts from the
    remapped basis. On failure the previous model is retained inside the
    raised error.
    """
    k = model.k
    n = unified.n
    if k > n:
        raise DecompositionError(f"k = {k} exceeds the {n} entities")
    matvec = _matvec_operator(unified.matrix)
    scale = frobenius_scale(unified.matrix)

    padded = np.zeros((n, k))
    for row, key in enumerate(unified.provenance):
        if model.has_entity(*key):
            padded[row] = model.vectors[model.row_of(*key)]

    def refreshed(eigenvalues, vectors):
        return LatentModel(
            eigenvalues=eigenvalues,
            vectors=vectors,
            kernel=model.kernel,
            offsets=dict(unified.offsets),
            sizes=dict(unified.sizes),
            provenance=list(unified.provenance),
            relations=dict(relations if relations is not None else model.relations),
            weights=(weights if weights is not None else model.weights).copy(),
            norm_params=dict(norm_params if norm_params is not None else model.norm_params),
        )

    # verification pass: are the old pairs still valid for the new matrix?
    ok = True
    for i in range(k):
        v = padded[:, i]
        if abs(np.linalg.norm(v) - 1.0) > 1e-8:
            ok = False
            break
        if np.linalg.norm(matvec(v) - model.eigenvalues[i] * v) > tol * scale:
            ok = False
            break
    if ok:
        return refreshed(model.eigenvalues.copy(), padded)

    max_restarts = max_iter if max_iter is not None else 10 * k
    try:
        eigenvalues, vectors, _ = _lanczos_topk(
            matvec, n, k, tol, max_restarts, seed, scale, warm_basis=padded)
    except ConvergenceError as exc:
        exc.stale_model = model
        raise
    return refreshed(eigenvalues, _fix_signs(vectors))


def reconstruction_error(model: LatentModel, unified: UnifiedMatrix,
                         chunk: int = 65536) -> float:
    """Frobenius error of the kernelized reconstruction on A's stored entries."""
    rows, cols, values = unified.matrix.to_arrays()
    f = model.kernel_values()
    v = model.vectors
    total = 0.0
    for start in range(0, len(values), chunk):
        r = rows[start:start + chunk]
        c = cols[start:start + chunk]
        a = values[start:start + chunk]
        predicted = np.einsum("ij,ij->i", v[r] * f, v[c])
        total += float(np.sum((a - predicted) ** 2))
    return math.sqrt(total)


# -- model file --------------------------------------------------------------

def model_text(model: LatentModel) -> str:
    """Canonical plain-text form; all reals carry 17 significant digits."""
    lines: list[str] = [MODEL_MAGIC,
                        f"k {model.k}",
                        f"n {model.n}",
                        f"kernel {model.kernel.format()}"]
    for etype, start in model.offsets.items():
        lines.append(f"type {etype} {start} {model.sizes[etype]}")
    for rel, (ta, tb) in model.relations.items():
        lines.append(f"rel {rel} {ta} {tb} {fmt_sig(model.weights.get(rel))}")
    for params in model.norm_params.values():
        lines.extend(params_to_lines(params))
    for etype, entity_id in model.provenance:
        lines.append(f"entity {etype} {entity_id}")
    lines.append("eigenvalues " + " ".join(fmt_sig(x) for x in model.eigenvalues))
    lines.append("vectors")
    for row in model.vectors:
        lines.append(" ".join(fmt_sig(x) for x in row))
    return "\n".join(lines) + "\n"


def save_model(model: LatentModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(model_text(model))


def load_model(path) -> LatentModel:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MODEL_MAGIC:
        raise DecompositionError(f"{path}: not a model file")
    k = n = None
    kernel = KernelSpec("truncated")
    offsets: dict[str, int] = {}
    sizes: dict[str, int] = {}
    provenance: list[tuple[str, str]] = []
    relations: dict[str, tuple[str, str]] = {}
    weights: dict[str, float] = {}
    norm_params: dict[str, NormalizationParams] = {}
    eigenvalues: np.ndarray | None = None
    vector_rows: list[np.ndarray] = []
    pending_norm: list[str] | None = None
    in_vectors = False

    def flush_norm():
        nonlocal pending_norm
        if pending_norm:
            params = params_from_lines(pending_norm[0], pending_norm[1:])
            norm_params[params.rel] = params
            pending_norm = None

    try:
        for line in lines[1:]:
            if in_vectors:
                vector_rows.append(np.array([float(x) for x in line.split()]))
                continue
            key, _, rest = line.partition(" ")
            if key in ("rowmeans", "colmeans"):
                if pending_norm is None:
                    raise DecompositionError(f"{path}: stray {key} line")
                pending_norm.append(line)
                continue
            flush_norm()
            if key == "k":
                k = int(rest)
            elif key == "n":
                n = int(rest)
            elif key == "kernel":
                kernel = KernelSpec.parse(rest)
            elif key == "type":
                name, start, size = rest.rsplit(" ", 2)
                offsets[name] = int(start)
                sizes[name] = int(size)
            elif key == "rel":
                rel, ta, tb, w = rest.split(" ")
                relations[rel] = (ta, tb)
                weights[rel] = float(w)
            elif key == "norm":
                pending_norm = [line]
            elif key == "entity":
                etype, entity_id = rest.split(" ", 1)
                provenance.append((etype, entity_id))
            elif key == "eigenvalues":
                eigenvalues = np.array([float(x) for x in rest.split()])
            elif key == "vectors":
                in_vectors = True
            else:
                raise DecompositionError(f"{path}: unknown model line {key!r}")
        flush_norm()
    except (ValueError, IndexError) as exc:
        raise DecompositionError(f"{path}: malformed model file: {exc}") from None

    if k is None or n is None or eigenvalues is None:
        raise DecompositionError(f"{path}: model file missing k/n/eigenvalues")
    if len(eigenvalues) != k or len(vector_rows) != n:
        raise DecompositionError(f"{path}: model file dimensions do not match header")
    vectors = np.vstack(vector_rows) if n else np.zeros((0, k))
    if vectors.shape != (n, k):
        raise DecompositionError(f"{path}: vector rows are ragged")
    model = LatentModel(eigenvalues=eigenvalues, vectors=vectors, kernel=kernel,
                        offsets=offsets, sizes=sizes, provenance=provenance,
                        relations=relations, weights=RelationshipWeights(weights),
                        norm_params=norm_params)
    kernel.validate_spectrum(model.eigenvalues)
    return model
