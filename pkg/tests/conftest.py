"""Shared fixtures: the synthetic acceptance suite and trained transforms.

The suite has 20 base classes and 8 novel classes (a blob family plus
four moon pairs) in 16 dimensions. Class structure is confined to a
3-dimensional subspace while per-sample noise fills all 16 dimensions;
many-shot classifiers average that ambient noise away, so a transform
that learns the subspace projection genuinely improves few-shot
classifiers on classes it never saw.
"""

import time

import numpy as np
import pytest

from metafunc.embeddings import (
    DistributionSpec,
    EmbeddingSet,
    generate_synthetic,
    lift_dimension,
    merge_embedding_sets,
    shift_class_ids,
    split_classes,
    translate,
)
from metafunc.episodes import SamplerConfig, sample_binary_functional_set
from metafunc.functional import MflTrainConfig, MflVariant, train_mfl
from metafunc.rng import keyed_rng

SUITE_DIM = 16
SUITE_SAMPLES_PER_CLASS = 60
SUITE_HIDDEN = 64

SUITE_SAMPLER = SamplerConfig(
    many_shot_repeats_Ml=3,
    few_shot_repeats_Mf=30,
    shot_s=1,
    negative_multipliers_k=(1, 2, 3),
    hyper_set_H=(0.1, 1.0, 10.0),
)


def build_acceptance_suite(
    seed=11,
    intrinsic_dim=3,
    blob_separation=3.0,
    blob_noise=0.25,
    ambient_noise=1.4,
    moon_separation=1.5,
    moon_noise=0.15,
):
    """Build (base, novel) embedding sets for the evaluation suite.

    Twenty blob classes and four moon pairs are laid out in an
    `intrinsic_dim`-dimensional space, lifted to 16 dimensions through one
    shared orthonormal map, and perturbed with isotropic ambient noise.
    The base split keeps 14 blob and 6 moon classes; the novel split holds
    out the remaining 6 blob and 2 moon classes.
    """
    blobs = generate_synthetic(
        DistributionSpec(
            "blobs",
            20,
            SUITE_SAMPLES_PER_CLASS,
            dim=intrinsic_dim,
            noise_sigma=blob_noise,
            separation=blob_separation,
            seed=seed,
        )
    )
    sets = [blobs]
    rng = keyed_rng(seed, 777)
    for j in range(4):
        moons = generate_synthetic(
            DistributionSpec(
                "moons",
                2,
                SUITE_SAMPLES_PER_CLASS,
                noise_sigma=moon_noise,
                separation=moon_separation,
                seed=seed + 100 + j,
            )
        )
        moons = lift_dimension(moons, intrinsic_dim, seed=seed * 10 + j)
        offset = rng.normal(size=intrinsic_dim)
        offset *= (1.2 * blob_separation) / np.linalg.norm(offset)
        sets.append(shift_class_ids(translate(moons, offset), 20 + 2 * j))
    full = merge_embedding_sets(*sets)
    full = lift_dimension(full, SUITE_DIM, seed=4242)
    noise = keyed_rng(seed, 888).normal(0.0, ambient_noise, full.vectors.shape)
    full = EmbeddingSet(
        SUITE_DIM,
        full.class_ids,
        (full.vectors.astype(np.float64) + noise).astype(np.float32),
    )
    base_ids = list(range(14)) + list(range(20, 26))
    novel_ids = list(range(14, 20)) + [26, 27]
    return split_classes(full, base_ids, novel_ids)


@pytest.fixture(scope="session")
def suite():
    """(base, novel, timings) for the acceptance configuration."""
    t0 = time.perf_counter()
    base, novel = build_acceptance_suite()
    return base, novel, {"build": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def suite_fset(suite):
    """Binary functional set over the suite base classes, with timing."""
    base, _, _ = suite
    t0 = time.perf_counter()
    fset = sample_binary_functional_set(base, SUITE_SAMPLER, seed=21)
    return fset, time.perf_counter() - t0


@pytest.fixture(scope="session")
def vanilla_model(suite_fset):
    """Depth-1 transform without prototypes, with training time."""
    fset, _ = suite_fset
    t0 = time.perf_counter()
    model = train_mfl(fset, MflVariant("vanilla", 1), MflTrainConfig(hidden=SUITE_HIDDEN, seed=5))
    return model, time.perf_counter() - t0


@pytest.fixture(scope="session")
def composite_model(suite_fset):
    """Depth-3 composite transform (classifier and prototype branches)."""
    fset, _ = suite_fset
    t0 = time.perf_counter()
    model = train_mfl(fset, MflVariant("composite", 3), MflTrainConfig(hidden=SUITE_HIDDEN, seed=5))
    return model, time.perf_counter() - t0


@pytest.fixture()
def tiny_base():
    """Small, fast embedding set for unit tests."""
    return generate_synthetic(
        DistributionSpec("blobs", 6, 12, dim=4, noise_sigma=0.5, separation=5.0, seed=3)
    )
