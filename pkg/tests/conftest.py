"""Shared random instance builders for the projection and solver tests."""

import warnings

import numpy as np
import pytest

from msbridge.core import (
    BARYCENTRIC,
    PATH,
    SERIES_PARALLEL,
    GraphStructure,
    KernelSet,
    Marginal,
)


def random_kernel_set(structure, sizes, rng, lo=0.2, hi=1.8):
    """Random strictly positive kernels with the structure's edge shapes."""
    kernels = {}
    for edge in structure.edges():
        row, col = structure.edge_nodes(edge)
        kernels[edge] = rng.uniform(lo, hi, size=(sizes[row], sizes[col]))
    return KernelSet(structure, 1.0, kernels)


def random_scalings(structure, sizes, rng, spread=0.8):
    return {key: np.exp(rng.normal(0.0, spread, size=sizes[key]))
            for key in structure.index_set()}


def path_instance(rng, max_n=4, max_s=4, equal_sizes=None):
    s = int(rng.integers(2, max_s + 1))
    structure = GraphStructure(PATH, s=s)
    sizes = {key: (equal_sizes or int(rng.integers(2, max_n + 1)))
             for key in structure.index_set()}
    kernels = random_kernel_set(structure, sizes, rng)
    scalings = random_scalings(structure, sizes, rng)
    return structure, sizes, kernels, scalings


def bc_instance(rng, max_n=3, max_n0=3, max_j=3, max_s=3, equal_sizes=None):
    s = int(rng.integers(2, max_s + 1))
    J = int(rng.integers(1, max_j + 1))
    n0 = equal_sizes or int(rng.integers(2, max_n0 + 1))
    structure = GraphStructure(BARYCENTRIC, s=s, J=J, n0=n0)
    sizes = {}
    for key in structure.index_set():
        if key[0] == 0:
            sizes[key] = n0
        else:
            sizes[key] = equal_sizes or int(rng.integers(2, max_n + 1))
    kernels = random_kernel_set(structure, sizes, rng)
    scalings = random_scalings(structure, sizes, rng)
    return structure, sizes, kernels, scalings


def sp_instance(rng, max_n=3, max_j=3, max_s=4, min_s=2, equal_sizes=None):
    s = int(rng.integers(min_s, max_s + 1))
    J = int(rng.integers(1, max_j + 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        structure = GraphStructure(SERIES_PARALLEL, s=s, J=J)
    sizes = {key: (equal_sizes or int(rng.integers(2, max_n + 1)))
             for key in structure.index_set()}
    kernels = random_kernel_set(structure, sizes, rng)
    scalings = random_scalings(structure, sizes, rng)
    return structure, sizes, kernels, scalings


def random_marginals(structure, sizes, rng, d=2, uniform=False):
    """Random empirical marginals keyed by the structure's nodes."""
    out = {}
    for key in structure.index_set():
        n = sizes[key]
        pts = rng.normal(0.0, 1.0, size=(n, d))
        if uniform:
            w = np.full(n, 1.0 / n)
        else:
            w = rng.uniform(0.5, 1.5, size=n)
            w = w / w.sum()
        out[key] = Marginal(pts, w, label=key)
    return out


def path_problem(rng, max_n=4, max_s=4, d=2, uniform=False):
    s = int(rng.integers(2, max_s + 1))
    structure = GraphStructure(PATH, s=s)
    sizes = {key: int(rng.integers(2, max_n + 1)) for key in structure.index_set()}
    return structure, random_marginals(structure, sizes, rng, d=d, uniform=uniform)


def bc_problem(rng, max_n=3, max_n0=3, max_j=3, max_s=3, d=2, uniform=False):
    s = int(rng.integers(2, max_s + 1))
    J = int(rng.integers(1, max_j + 1))
    n0 = int(rng.integers(2, max_n0 + 1))
    structure = GraphStructure(BARYCENTRIC, s=s, J=J, n0=n0)
    sizes = {key: (n0 if key[0] == 0 else int(rng.integers(2, max_n + 1)))
             for key in structure.index_set()}
    return structure, random_marginals(structure, sizes, rng, d=d, uniform=uniform)


def sp_problem(rng, max_n=3, max_j=3, max_s=4, min_s=2, d=2, uniform=False):
    s = int(rng.integers(min_s, max_s + 1))
    J = int(rng.integers(1, max_j + 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        structure = GraphStructure(SERIES_PARALLEL, s=s, J=J)
    sizes = {key: int(rng.integers(2, max_n + 1)) for key in structure.index_set()}
    return structure, random_marginals(structure, sizes, rng, d=d, uniform=uniform)


def classical_sinkhorn(kernel, mu, nu, tolerance=1e-15, max_iterations=200000):
    """Textbook two-marginal Sinkhorn written directly on the kernel matrix.

    Independent of the structured solver; used to check the s=2 reduction.
    """
    u = np.ones(len(mu))
    v = np.ones(len(nu))
    for _ in range(max_iterations):
        u = mu / (kernel @ v)
        v = nu / (kernel.T @ u)
        if np.abs(u * (kernel @ v) - mu).sum() <= tolerance:
            break
    return u[:, None] * kernel * v[None, :]


def supported_pairs(structure):
    """All (key1, key2) pairs a workspace must evaluate, canonical orientation."""
    s, J = structure.s, structure.J
    if structure.variant == PATH:
        return [((1, a), (1, b))
                for a in range(1, s + 1) for b in range(a + 1, s + 1)]
    if structure.variant == BARYCENTRIC:
        pairs = [((0, a), (0, b))
                 for a in range(1, s + 1) for b in range(a + 1, s + 1)]
        pairs += [((0, sig), (j, sig))
                  for j in range(1, J + 1) for sig in range(1, s + 1)]
        return pairs
    if s == 2:
        return [((1, 1), (1, 2))]
    pairs = [((1, 1), (j, 2)) for j in range(1, J + 1)]
    pairs += [((j, sig), (j, sig + 1))
              for j in range(1, J + 1) for sig in range(2, s - 2 + 1)]
    pairs += [((j, s - 1), (1, s)) for j in range(1, J + 1)]
    return pairs


@pytest.fixture
def small_spec():
    """A tiny two-core generator spec shared by the CLI and pipeline tests."""
    from msbridge.synth import CoreModel, Phase, SynthSpec

    def core(base):
        return CoreModel(phases=(
            Phase(0.0, 0.1, np.array([base, base / 2, 1.0]), 0.02,
                  jitter_std=0.01),
            Phase(0.1, 0.2, np.array([2 * base, base, 2.0]), 0.02),
        ))

    return SynthSpec(n_runs=6, J=2, duration_s=0.2, sample_period_s=0.01,
                     seed=17, cores=(core(4.0), core(1.0)))
