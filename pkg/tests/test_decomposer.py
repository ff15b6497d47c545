import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semrec.aggregate import RelationshipWeights, UnifiedMatrix, build_unified
from semrec.decompose import (
    ConvergenceError,
    DecompositionError,
    KernelError,
    KernelSpec,
    LatentModel,
    apply_kernel,
    decompose,
    load_model,
    reconstruction_error,
    residual_norms,
    save_model,
    update,
)
from semrec.graph import GraphError, SemanticDataset, SparseMatrix, load_schema


def unified_from_dense(arr):
    """Dense symmetric array (zero diagonal) -> unified matrix, all
    off-diagonal cells stored."""
    n = arr.shape[0]
    m = SparseMatrix(n, n)
    for i in range(n):
        for j in range(n):
            if i != j:
                m.set(i, j, float(arr[i, j]))
    return UnifiedMatrix.single_type(m)


def random_symmetric(n, seed, density=1.0):
    rng = np.random.default_rng(seed)
    arr = rng.normal(size=(n, n))
    arr = (arr + arr.T) / 2
    np.fill_diagonal(arr, 0.0)
    if density < 1.0:
        mask = rng.random(size=(n, n)) < density
        mask = mask | mask.T
        arr = np.where(mask, arr, 0.0)
    return arr


def dense_top_eigenpairs(arr, k):
    """Oracle: full dense eigendecomposition, top k by |eigenvalue|."""
    theta, vecs = np.linalg.eigh(arr)
    order = np.lexsort((-theta, -np.abs(theta)))[:k]
    return theta[order], vecs[:, order]


def two_path():
    return unified_from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))


class TestKernelSpec:
    def test_parse_format_round_trip(self):
        for text in ("truncated", "exponential:0.5", "von_neumann:0.25",
                     "polynomial:0,1,0.5"):
            spec = KernelSpec.parse(text)
            assert KernelSpec.parse(spec.format()) == spec

    def test_truncated_is_identity_on_spectrum(self):
        lam = np.array([2.0, -1.5, 0.0])
        np.testing.assert_array_equal(KernelSpec("truncated").apply(lam), lam)

    def test_exponential_alpha_zero_maps_to_one(self):
        lam = np.array([3.0, -7.0])
        np.testing.assert_array_equal(
            KernelSpec("exponential", alpha=0.0).apply(lam), [1.0, 1.0])

    def test_geometric_series_kernel_at_half(self):
        # 1 / (1 - 0.5 * 1) = 2
        out = KernelSpec("von_neumann", alpha=0.5).apply(np.array([1.0]))
        assert out[0] == pytest.approx(2.0)

    def test_geometric_series_kernel_pole_rejected(self):
        spec = KernelSpec("von_neumann", alpha=0.5)
        with pytest.raises(KernelError, match="diverges"):
            spec.apply(np.array([2.0]))

    def test_linear_polynomial_is_identity(self):
        lam = np.array([1.0, -2.0, 0.25])
        out = KernelSpec("polynomial", coefficients=(0.0, 1.0)).apply(lam)
        np.testing.assert_allclose(out, lam)

    def test_polynomial_degree_capped_at_8(self):
        KernelSpec("polynomial", coefficients=(1.0,) * 9)  # degree 8: fine
        with pytest.raises(KernelError, match="capped"):
            KernelSpec("polynomial", coefficients=(1.0,) * 10)

    def test_unknown_kind_rejected(self):
        with pytest.raises(KernelError, match="unknown kernel"):
            KernelSpec.parse("gaussian:1.0")
        with pytest.raises(KernelError):
            KernelSpec.parse("exponential")


class TestDecompose:
    def test_two_node_swap_matrix(self):
        model = decompose(two_path(), k=2)
        np.testing.assert_allclose(model.eigenvalues, [1.0, -1.0], atol=1e-12)
        s = 1 / math.sqrt(2)
        np.testing.assert_allclose(model.vectors[:, 0], [s, s], atol=1e-12)
        np.testing.assert_allclose(model.vectors[:, 1], [s, -s], atol=1e-12)

    def test_matches_dense_oracle(self):
        arr = random_symmetric(20, seed=7)
        want_theta, want_vecs = dense_top_eigenpairs(arr, 5)
        model = decompose(unified_from_dense(arr), k=5, seed=3)
        scale = np.linalg.norm(arr)
        np.testing.assert_allclose(model.eigenvalues, want_theta,
                                   atol=1e-8 * scale)
        for i in range(5):
            overlap = abs(np.dot(model.vectors[:, i], want_vecs[:, i]))
            assert overlap == pytest.approx(1.0, abs=1e-8)

    def test_zero_matrix_gives_zero_spectrum(self):
        unified = UnifiedMatrix.single_type(SparseMatrix(5, 5))
        model = decompose(unified, k=3)
        np.testing.assert_array_equal(model.eigenvalues, [0.0, 0.0, 0.0])
        np.testing.assert_array_equal(residual_norms(model, unified), [0, 0, 0])
        gram = model.vectors.T @ model.vectors
        np.testing.assert_allclose(gram, np.eye(3), atol=1e-12)

    def test_residuals_below_tolerance(self):
        unified = unified_from_dense(random_symmetric(30, seed=11, density=0.4))
        model = decompose(unified, k=6, seed=0)
        scale = unified.matrix.frobenius_norm()
        assert np.all(residual_norms(model, unified) <= 1e-8 * scale)

    def test_columns_orthonormal(self):
        unified = unified_from_dense(random_symmetric(25, seed=5))
        model = decompose(unified, k=8)
        gram = model.vectors.T @ model.vectors
        assert np.max(np.abs(gram - np.eye(8))) <= 1e-8

    def test_deterministic_for_fixed_seed(self):
        unified = unified_from_dense(random_symmetric(18, seed=2))
        a = decompose(unified, k=4, seed=42)
        b = decompose(unified, k=4, seed=42)
        np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
        np.testing.assert_array_equal(a.vectors, b.vectors)

    def test_seed_independent_up_to_tolerance(self):
        unified = unified_from_dense(random_symmetric(18, seed=2))
        a = decompose(unified, k=4, seed=0)
        b = decompose(unified, k=4, seed=99)
        np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-9)
        np.testing.assert_allclose(a.vectors, b.vectors, atol=1e-6)

    def test_sign_convention(self):
        unified = unified_from_dense(random_symmetric(15, seed=9))
        model = decompose(unified, k=5)
        for col in range(5):
            v = model.vectors[:, col]
            first = np.nonzero(np.abs(v) > 1e-12 * np.max(np.abs(v)))[0][0]
            assert v[first] > 0

    def test_restart_path_converges(self):
        # k small vs n large forces several restart cycles
        unified = unified_from_dense(random_symmetric(80, seed=13, density=0.3))
        model = decompose(unified, k=2, seed=1)
        scale = unified.matrix.frobenius_norm()
        assert np.all(residual_norms(model, unified) <= 1e-8 * scale)
        want_theta, _ = dense_top_eigenpairs(
            np.array([[unified.matrix.get(i, j) for j in range(80)]
                      for i in range(80)]), 2)
        np.testing.assert_allclose(model.eigenvalues, want_theta, atol=1e-7 * scale)

    def test_invalid_k_rejected(self):
        unified = two_path()
        with pytest.raises(DecompositionError, match="exceeds"):
            decompose(unified, k=3)
        with pytest.raises(DecompositionError, match=">= 1"):
            decompose(unified, k=0)

    def test_nonconvergence_reports_residuals(self):
        unified = unified_from_dense(random_symmetric(60, seed=3))
        with pytest.raises(ConvergenceError, match="restarts") as info:
            decompose(unified, k=2, tol=1e-15, max_iter=1)
        assert info.value.residuals is not None
        assert np.all(info.value.residuals >= 0)


class TestPredict:
    def test_full_rank_reproduces_entries(self):
        arr = random_symmetric(10, seed=21)
        unified = unified_from_dense(arr)
        model = decompose(unified, k=10)
        for i, j, v in unified.matrix.items():
            assert model.score_rows(i, j) == pytest.approx(v, abs=1e-6)

    def test_self_score_is_zero_at_full_rank(self):
        # the unified matrix has no diagonal, so a full-rank model
        # reconstructs 0 there
        arr = random_symmetric(8, seed=33)
        model = decompose(unified_from_dense(arr), k=8)
        for i in range(8):
            assert model.score_rows(i, i) == pytest.approx(0.0, abs=1e-6)

    def test_two_node_score_is_stored_edge(self):
        model = decompose(two_path(), k=2)
        assert model.score_rows(0, 1) == pytest.approx(1.0, abs=1e-12)

    def test_predict_by_entity_identity(self):
        model = decompose(two_path(), k=2)
        assert model.predict(("node", "0"), ("node", "1")) == pytest.approx(1.0)
        with pytest.raises(GraphError, match="unknown entity"):
            model.predict(("node", "7"), ("node", "1"))

    def test_denormalized_predict_recovers_rating(self, tmp_path):
        schema_path = tmp_path / "s.txt"
        schema_path.write_text(
            "ENTITY user\nENTITY item\nREL rating user item weighted asymmetric\n",
            encoding="utf-8")
        schema = load_schema(schema_path)
        ds = SemanticDataset(schema)
        ds.add_edge("rating", ("u1", "i1"), 5.0)
        ds.add_edge("rating", ("u1", "i2"), 3.0)
        ds.add_edge("rating", ("u2", "i1"), 4.0)
        weights = RelationshipWeights({"rating": 0.7})
        unified, params, reduced = build_unified(ds, weights)
        model = decompose(unified, k=unified.n, norm_params=params, weights=weights,
                          relations={r.name: r.endpoints
                                     for r in reduced.schema.relation_types})
        for (u, i), want in [(("u1", "i1"), 5.0), (("u1", "i2"), 3.0),
                             (("u2", "i1"), 4.0)]:
            got = model.predict(("user", u), ("item", i), denormalize_rel="rating")
            assert got == pytest.approx(want, abs=1e-6)
            # argument order must not matter
            swapped = model.predict(("item", i), ("user", u), denormalize_rel="rating")
            assert swapped == pytest.approx(want, abs=1e-6)

    def test_denormalize_zero_weight_rejected(self):
        model = decompose(two_path(), k=1, relations={"r": ("node", "node")},
                          weights=RelationshipWeights({"r": 0.0}))
        with pytest.raises(GraphError, match="weight 0"):
            model.predict(("node", "0"), ("node", "1"), denormalize_rel="r")


class TestApplyKernel:
    def test_kernel_swapped_without_touching_factors(self):
        model = decompose(two_path(), k=2)
        exp = apply_kernel(model, KernelSpec("exponential", alpha=1.0))
        np.testing.assert_array_equal(exp.eigenvalues, model.eigenvalues)
        np.testing.assert_array_equal(exp.vectors, model.vectors)
        assert exp.kernel.kind == "exponential"
        assert model.kernel.kind == "truncated"

    def test_exponential_score_on_two_nodes(self):
        model = decompose(two_path(), k=2)
        exp = apply_kernel(model, KernelSpec("exponential", alpha=1.0))
        assert exp.score_rows(0, 1) == pytest.approx(math.sinh(1.0), abs=1e-10)
        assert exp.score_rows(0, 0) == pytest.approx(math.cosh(1.0), abs=1e-10)

    def test_pole_rejected_against_model_spectrum(self):
        model = decompose(two_path(), k=2)  # spectrum {1, -1}
        with pytest.raises(KernelError, match="diverges"):
            apply_kernel(model, KernelSpec("von_neumann", alpha=1.0))
        ok = apply_kernel(model, KernelSpec("von_neumann", alpha=0.5))
        assert ok.score_rows(0, 1) == pytest.approx((2.0 - 2.0 / 3.0) / 2, abs=1e-10)


def principal_angles(v1, v2):
    s = np.linalg.svd(v1.T @ v2, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))


class TestUpdate:
    def test_unchanged_matrix_is_a_fixed_point(self):
        unified = unified_from_dense(random_symmetric(24, seed=17))
        model = decompose(unified, k=5)
        again = update(model, unified)
        np.testing.assert_allclose(again.eigenvalues, model.eigenvalues, atol=1e-10)
        np.testing.assert_allclose(again.vectors, model.vectors, atol=1e-10)

    def test_perturbed_matrix_reconverges(self):
        arr = random_symmetric(40, seed=29, density=0.5)
        unified = unified_from_dense(arr)
        model = decompose(unified, k=4)
        rng = np.random.default_rng(31)
        perturbed = arr.copy()
        for _ in range(8):  # about 1% of cells touched
            i, j = rng.integers(0, 40, size=2)
            if i == j:
                continue
            value = rng.normal() * 0.2
            perturbed[i, j] += value
            perturbed[j, i] = perturbed[i, j]
        unified2 = unified_from_dense(perturbed)
        warm = update(model, unified2)
        scale = unified2.matrix.frobenius_norm()
        assert np.all(residual_norms(warm, unified2) <= 1e-8 * scale)
        cold = decompose(unified2, k=4)
        angles = principal_angles(warm.vectors, cold.vectors)
        assert np.max(angles) <= 0.1

    def test_new_isolated_entity_gets_zero_vector(self):
        arr = random_symmetric(12, seed=41)
        unified = unified_from_dense(arr)
        model = decompose(unified, k=3)
        grown = SparseMatrix(13, 13)
        for i, j, v in unified.matrix.items():
            grown.set(i, j, v)
        unified2 = UnifiedMatrix.single_type(grown)
        updated = update(model, unified2)
        np.testing.assert_array_equal(updated.vectors[12], [0.0, 0.0, 0.0])
        np.testing.assert_allclose(updated.vectors[:12], model.vectors, atol=1e-12)
        assert updated.provenance[12] == ("node", "12")

    def test_nonconvergence_keeps_stale_model(self):
        arr = random_symmetric(30, seed=43)
        unified = unified_from_dense(arr)
        model = decompose(unified, k=3)
        unified2 = unified_from_dense(random_symmetric(30, seed=44))
        with pytest.raises(ConvergenceError) as info:
            update(model, unified2, max_iter=0)
        assert info.value.stale_model is model


class TestReconstructionError:
    def test_full_rank_error_vanishes(self):
        unified = unified_from_dense(random_symmetric(12, seed=51))
        model = decompose(unified, k=12)
        assert reconstruction_error(model, unified) <= 1e-8

    def test_rank_one_on_two_nodes_matches_oracle(self):
        # dense oracle: best rank-1 kernelized approximation keeps the +1
        # eigenpair, leaving (1 - 1/2)^2 per stored entry
        unified = two_path()
        model = decompose(unified, k=1)
        want = math.sqrt(2 * (1.0 - 0.5) ** 2)
        assert reconstruction_error(model, unified) == pytest.approx(want, abs=1e-10)

    def test_nonincreasing_in_k(self):
        unified = unified_from_dense(random_symmetric(16, seed=57))
        errors = [reconstruction_error(decompose(unified, k=k), unified)
                  for k in range(1, 17)]
        for prev, nxt in zip(errors, errors[1:]):
            assert nxt <= prev + 1e-9
        assert errors[-1] <= 1e-8

    def test_kernel_changes_reconstruction(self):
        unified = unified_from_dense(random_symmetric(10, seed=59))
        model = decompose(unified, k=10)
        exp = apply_kernel(model, KernelSpec("exponential", alpha=0.3))
        assert reconstruction_error(exp, unified) > 1e-3


class TestModelFile:
    def build_model(self, tmp_path):
        schema_path = tmp_path / "s.txt"
        schema_path.write_text("""
ENTITY user
ENTITY item
REL rating user item weighted asymmetric
REL view user item positive asymmetric
""", encoding="utf-8")
        schema = load_schema(schema_path)
        ds = SemanticDataset(schema)
        ds.add_edge("rating", ("u1", "i1"), 5.0)
        ds.add_edge("rating", ("u2", "i2"), 2.0)
        ds.add_edge("rating", ("u2", "i1"), 4.0)
        ds.add_edge("view", ("u1", "i2"), 3.0)
        weights = RelationshipWeights({"rating": 2.0})
        unified, params, reduced = build_unified(ds, weights, {"rating": "row_col"})
        return decompose(unified, k=3, norm_params=params, weights=weights,
                         kernel=KernelSpec("exponential", alpha=0.25),
                         relations={r.name: r.endpoints
                                    for r in reduced.schema.relation_types})

    def test_save_load_round_trip(self, tmp_path):
        model = self.build_model(tmp_path)
        path = tmp_path / "model.txt"
        save_model(model, path)
        back = load_model(path)
        np.testing.assert_array_equal(back.eigenvalues, model.eigenvalues)
        np.testing.assert_array_equal(back.vectors, model.vectors)
        assert back.kernel == model.kernel
        assert back.offsets == model.offsets
        assert back.sizes == model.sizes
        assert back.provenance == model.provenance
        assert back.relations == model.relations
        assert back.weights == model.weights
        assert set(back.norm_params) == set(model.norm_params)
        p, q = back.norm_params["rating"], model.norm_params["rating"]
        assert (p.mode, p.global_mean, p.scale) == (q.mode, q.global_mean, q.scale)
        np.testing.assert_array_equal(p.row_means, q.row_means)
        np.testing.assert_array_equal(p.col_means, q.col_means)

    def test_save_is_byte_deterministic(self, tmp_path):
        model = self.build_model(tmp_path)
        save_model(model, tmp_path / "a.txt")
        save_model(model, tmp_path / "b.txt")
        assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()

    def test_loaded_model_predicts_identically(self, tmp_path):
        model = self.build_model(tmp_path)
        save_model(model, tmp_path / "m.txt")
        back = load_model(tmp_path / "m.txt")
        a = model.predict(("user", "u2"), ("item", "i1"), denormalize_rel="rating")
        b = back.predict(("user", "u2"), ("item", "i1"), denormalize_rel="rating")
        assert a == b

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("something else\n", encoding="utf-8")
        with pytest.raises(DecompositionError, match="not a model file"):
            load_model(path)

    def test_dimension_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("semrec-model 1\nk 2\nn 3\nkernel truncated\n"
                        "eigenvalues 1 -1\nvectors\n1 0\n0 1\n",
                        encoding="utf-8")
        with pytest.raises(DecompositionError, match="dimensions"):
            load_model(path)

    def test_divergent_kernel_rejected_at_load(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("semrec-model 1\nk 1\nn 1\nkernel von_neumann:1\n"
                        "entity node 0\neigenvalues 2\nvectors\n1\n",
                        encoding="utf-8")
        with pytest.raises(KernelError, match="diverges"):
            load_model(path)


@st.composite
def small_symmetric(draw):
    n = draw(st.integers(2, 8))
    values = draw(st.lists(st.floats(min_value=-5, max_value=5,
                                     allow_nan=False, allow_infinity=False),
                           min_size=n * (n - 1) // 2, max_size=n * (n - 1) // 2))
    arr = np.zeros((n, n))
    it = iter(values)
    for i in range(n):
        for j in range(i + 1, n):
            arr[i, j] = arr[j, i] = next(it)
    return arr


class TestFullRankProperty:
    @given(arr=small_symmetric())
    @settings(max_examples=30, deadline=None)
    def test_full_rank_model_reconstructs_and_stays_orthonormal(self, arr):
        unified = unified_from_dense(arr)
        n = arr.shape[0]
        model = decompose(unified, k=n)
        scale = unified.matrix.frobenius_norm()
        gram = model.vectors.T @ model.vectors
        assert np.max(np.abs(gram - np.eye(n))) <= 1e-8
        assert np.all(residual_norms(model, unified) <= 1e-8 * scale + 1e-12)
        for i, j, v in unified.matrix.items():
            assert model.score_rows(i, j) == pytest.approx(
                v, abs=1e-6 * max(1.0, scale))
