"""Synthetic generators, set algebra and persistence for embeddings."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metafunc.embeddings import (
    DistributionSpec,
    EmbeddingSet,
    generate_synthetic,
    lift_dimension,
    load_embeddings,
    load_embeddings_csv,
    merge_embedding_sets,
    save_embeddings,
    save_embeddings_csv,
    shift_class_ids,
    split_classes,
    translate,
)
from metafunc.errors import (
    DataError,
    DimensionShrink,
    EmptyClass,
    FormatError,
    OverlappingSplit,
    UnknownClass,
    UnsupportedShape,
)


def _blob_spec(**kw):
    spec = dict(kind="blobs", num_classes=4, samples_per_class=10, dim=5,
                noise_sigma=0.5, separation=6.0, seed=7)
    spec.update(kw)
    return DistributionSpec(**spec)


class TestEmbeddingSet:
    def test_basic_properties(self):
        es = EmbeddingSet(2, [1, 0, 1], [[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
        assert len(es) == 3
        assert es.classes == [0, 1]
        assert np.array_equal(es.class_index()[1], [0, 2])
        assert es.class_vectors(0).shape == (1, 2)

    def test_arrays_are_read_only(self):
        es = EmbeddingSet(2, [0], [[1.0, 2.0]])
        with pytest.raises(ValueError):
            es.vectors[0, 0] = 9.0

    def test_rejects_bad_shapes_and_values(self):
        with pytest.raises(DataError):
            EmbeddingSet(3, [0], [[1.0, 2.0]])
        with pytest.raises(DataError):
            EmbeddingSet(2, [0, 1], [[1.0, 2.0]])
        with pytest.raises(DataError):
            EmbeddingSet(2, [0], [[np.inf, 2.0]])
        with pytest.raises(DataError):
            EmbeddingSet(2, [-1], [[1.0, 2.0]])

    def test_unknown_class_lookup(self):
        es = EmbeddingSet(2, [0], [[1.0, 2.0]])
        with pytest.raises(UnknownClass):
            es.class_vectors(5)


class TestGenerators:
    def test_blob_shapes_and_labels(self):
        es = generate_synthetic(_blob_spec())
        assert es.dim == 5
        assert len(es) == 40
        assert es.classes == [0, 1, 2, 3]
        assert all(len(es.class_vectors(c)) == 10 for c in es.classes)

    def test_blob_centers_are_separated(self):
        es = generate_synthetic(_blob_spec(noise_sigma=0.01))
        centers = np.stack([es.class_vectors(c).mean(axis=0) for c in es.classes])
        dists = np.linalg.norm(centers[:, None] - centers[None, :], axis=2)
        off_diag = dists[~np.eye(4, dtype=bool)]
        assert off_diag.min() > 0.8 * 6.0

    def test_generation_is_deterministic(self):
        a = generate_synthetic(_blob_spec())
        b = generate_synthetic(_blob_spec())
        assert a == b
        c = generate_synthetic(_blob_spec(seed=8))
        assert c != a

    @pytest.mark.parametrize("kind", ["moons", "circles", "strips"])
    def test_planar_kinds_lift_to_target_dim(self, kind):
        n_classes = 2 if kind in ("moons", "circles") else 3
        es = generate_synthetic(
            DistributionSpec(kind, n_classes, 15, dim=7, noise_sigma=0.2, separation=3.0, seed=1)
        )
        assert es.dim == 7
        assert len(es) == 15 * n_classes
        # planar data spans a 2D subspace after the orthonormal lift
        centered = es.vectors - es.vectors.mean(axis=0)
        rank = np.linalg.matrix_rank(centered.astype(np.float64), tol=1e-3)
        assert rank == 2

    def test_validation_errors(self):
        with pytest.raises(UnsupportedShape):
            DistributionSpec("rings", 2, 5).validate()
        with pytest.raises(EmptyClass):
            DistributionSpec("blobs", 0, 5).validate()
        with pytest.raises(EmptyClass):
            DistributionSpec("blobs", 2, 0).validate()
        with pytest.raises(UnsupportedShape):
            DistributionSpec("moons", 3, 5).validate()
        with pytest.raises(UnsupportedShape):
            DistributionSpec("blobs", 2, 5, dim=1).validate()
        with pytest.raises(DataError):
            DistributionSpec("blobs", 2, 5, noise_sigma=-1.0).validate()
        with pytest.raises(DataError):
            DistributionSpec("blobs", 2, 5, separation=0.0).validate()


class TestLiftAndAlgebra:
    def test_lift_preserves_pairwise_distances(self):
        es = generate_synthetic(DistributionSpec("moons", 2, 20, noise_sigma=0.1,
                                                 separation=2.0, seed=4))
        lifted = lift_dimension(es, 9, seed=17)
        d0 = np.linalg.norm(es.vectors[:, None] - es.vectors[None, :], axis=2)
        d1 = np.linalg.norm(lifted.vectors[:, None] - lifted.vectors[None, :], axis=2)
        assert np.allclose(d0, d1, atol=1e-3)

    def test_lift_rejects_shrinking(self):
        es = generate_synthetic(_blob_spec())
        with pytest.raises(DimensionShrink):
            lift_dimension(es, 3, seed=0)

    def test_lift_same_dim_is_identity(self):
        es = generate_synthetic(_blob_spec())
        assert lift_dimension(es, es.dim, seed=0) == es

    def test_translate_and_shift(self):
        es = generate_synthetic(_blob_spec())
        moved = translate(es, np.ones(es.dim))
        assert np.allclose(moved.vectors - es.vectors, 1.0, atol=1e-6)
        shifted = shift_class_ids(es, 10)
        assert shifted.classes == [10, 11, 12, 13]

    def test_merge_and_split_roundtrip(self):
        es = generate_synthetic(_blob_spec())
        base, novel = split_classes(es, [0, 1], [2, 3])
        assert base.classes == [0, 1]
        assert novel.classes == [2, 3]
        merged = merge_embedding_sets(base, novel)
        assert sorted(merged.classes) == [0, 1, 2, 3]
        assert len(merged) == len(es)

    def test_split_errors(self):
        es = generate_synthetic(_blob_spec())
        with pytest.raises(OverlappingSplit):
            split_classes(es, [0, 1], [1, 2])
        with pytest.raises(UnknownClass):
            split_classes(es, [0], [9])

    def test_merge_rejects_duplicate_classes(self):
        es = generate_synthetic(_blob_spec())
        with pytest.raises(OverlappingSplit):
            merge_embedding_sets(es, es)


class TestPersistence:
    def test_binary_roundtrip(self, tmp_path):
        es = generate_synthetic(_blob_spec())
        path = tmp_path / "e.embf"
        save_embeddings(es, path)
        assert load_embeddings(path) == es

    def test_csv_roundtrip(self, tmp_path):
        es = generate_synthetic(_blob_spec(num_classes=2, samples_per_class=5))
        path = tmp_path / "e.csv"
        save_embeddings_csv(es, path)
        assert load_embeddings_csv(path) == es

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.embf"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_truncated_payload(self, tmp_path):
        es = generate_synthetic(_blob_spec())
        path = tmp_path / "e.embf"
        save_embeddings(es, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError):
            load_embeddings(path)

    def test_csv_rejects_bad_header(self, tmp_path):
        path = tmp_path / "e.csv"
        path.write_text("id,f0\n0,1.0\n")
        with pytest.raises(FormatError):
            load_embeddings_csv(path)

    @settings(max_examples=20, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=8),
        dim=st.integers(min_value=2, max_value=6),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_roundtrip_property(self, tmp_path_factory, n, dim, seed):
        rng = np.random.default_rng(seed)
        es = EmbeddingSet(
            dim,
            rng.integers(0, 5, size=n),
            rng.normal(size=(n, dim)).astype(np.float32),
        )
        path = tmp_path_factory.mktemp("embf") / "e.embf"
        save_embeddings(es, path)
        assert load_embeddings(path) == es
