"""Dense ground-truth evaluation of coupling tensors at desk scale.

Materializes the full coupling tensor (one axis per constrained node, in the
structure's canonical order) so that structured projection code can be checked
against literal sums.  Guarded by an entry-count cap; this module is a test
oracle, not a computational path.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .core import Axis, GraphStructure, KernelSet, ScalingFamily

DEFAULT_SIZE_CAP = 1_000_000


@dataclasses.dataclass(frozen=True)
class DenseTensor:
    """A fully materialized tensor over the structure's constrained nodes."""

    structure: GraphStructure
    axes: tuple[Axis, ...]
    values: np.ndarray

    def __post_init__(self):
        if tuple(self.structure.index_set()) != self.axes:
            raise ValueError("axes must follow the structure's canonical order")
        if self.values.ndim != len(self.axes):
            raise ValueError(
                f"tensor rank {self.values.ndim} != number of axes {len(self.axes)}"
            )

    def axis_of(self, key: Axis) -> int:
        try:
            return self.axes.index(key)
        except ValueError:
            raise KeyError(f"{key} is not a constrained node of this structure") from None


def _check_cap(shape: tuple[int, ...], size_cap: int) -> None:
    total = 1
    for n in shape:
        total *= n
    if total > size_cap:
        raise ValueError(
            f"dense tensor would hold {total} entries, above the cap {size_cap}"
        )


def _tensor_shape(kernels: KernelSet) -> tuple[int, ...]:
    sizes = kernels.node_sizes()
    return tuple(sizes[key] for key in kernels.structure.index_set())


def _broadcast_edge(matrix: np.ndarray, a: int, b: int, ndim: int) -> np.ndarray:
    """Reshape an edge matrix so its rows land on axis ``a`` and columns on ``b``."""
    if not a < b:
        raise ValueError("canonical order should give row axis < column axis")
    shape = [1] * ndim
    shape[a] = matrix.shape[0]
    shape[b] = matrix.shape[1]
    return matrix.reshape(shape)


def assemble_kernel_tensor(kernels: KernelSet,
                           size_cap: int = DEFAULT_SIZE_CAP) -> DenseTensor:
    """Product of all edge kernels, broadcast over the canonical axes.

    Edges sharing the same axis pair (the degenerate two-snapshot
    series-parallel bundle) multiply entrywise.
    """
    structure = kernels.structure
    shape = _tensor_shape(kernels)
    _check_cap(shape, size_cap)
    order = structure.axis_order()
    values = np.ones(shape)
    for edge in structure.edges():
        row, col = structure.edge_nodes(edge)
        values = values * _broadcast_edge(kernels.kernels[edge],
                                          order[row], order[col], len(shape))
    return DenseTensor(structure, tuple(structure.index_set()), values)


def assemble_cost_tensor(structure: GraphStructure,
                         costs: dict[tuple, np.ndarray],
                         size_cap: int = DEFAULT_SIZE_CAP) -> DenseTensor:
    """Sum of all edge costs, broadcast over the canonical axes."""
    if set(costs) != set(structure.edges()):
        raise ValueError("cost keys do not match the structure's edges")
    order = structure.axis_order()
    sizes: dict[Axis, int] = {}
    for edge, c in costs.items():
        row, col = structure.edge_nodes(edge)
        sizes.setdefault(row, c.shape[0])
        sizes.setdefault(col, c.shape[1])
    shape = tuple(sizes[key] for key in structure.index_set())
    _check_cap(shape, size_cap)
    values = np.zeros(shape)
    for edge in structure.edges():
        row, col = structure.edge_nodes(edge)
        values = values + _broadcast_edge(costs[edge], order[row], order[col],
                                          len(shape))
    return DenseTensor(structure, tuple(structure.index_set()), values)


def apply_scalings(tensor: DenseTensor,
                   scalings: ScalingFamily | dict[Axis, np.ndarray]) -> DenseTensor:
    """Multiply the tensor by the outer product of per-node scaling vectors."""
    u = scalings.u if isinstance(scalings, ScalingFamily) else scalings
    if set(u) != set(tensor.axes):
        raise ValueError("scaling keys do not match the tensor's axes")
    values = tensor.values
    ndim = values.ndim
    for i, key in enumerate(tensor.axes):
        vec = np.asarray(u[key], dtype=np.float64)
        if vec.shape != (values.shape[i],):
            raise ValueError(f"scaling at {key} has length {vec.size}, "
                             f"axis has {values.shape[i]}")
        shape = [1] * ndim
        shape[i] = vec.size
        values = values * vec.reshape(shape)
    return DenseTensor(tensor.structure, tensor.axes, values)


def brute_proj(tensor: DenseTensor, key: Axis) -> np.ndarray:
    """Marginal of the tensor on one node: sum over every other axis."""
    i = tensor.axis_of(key)
    axes = tuple(a for a in range(tensor.values.ndim) if a != i)
    return tensor.values.sum(axis=axes)


def brute_proj2(tensor: DenseTensor, key1: Axis, key2: Axis) -> np.ndarray:
    """Pairwise marginal with ``key1`` on rows and ``key2`` on columns."""
    if key1 == key2:
        raise ValueError("pairwise projection needs two distinct nodes")
    i, j = tensor.axis_of(key1), tensor.axis_of(key2)
    axes = tuple(a for a in range(tensor.values.ndim) if a not in (i, j))
    out = tensor.values.sum(axis=axes)
    # after the sum the two surviving axes keep their original relative order
    return out if i < j else out.T


def total_mass(tensor: DenseTensor) -> float:
    return float(tensor.values.sum())


def brute_objective(tensor: DenseTensor, cost: DenseTensor, epsilon: float) -> float:
    """Entropic transport objective ``<C + eps*log M, M>`` with ``0 log 0 = 0``."""
    if cost.axes != tensor.axes or cost.values.shape != tensor.values.shape:
        raise ValueError("cost tensor does not match the coupling tensor")
    m = tensor.values
    c = cost.values
    mask = m > 0.0
    mm = m[mask]
    return float(np.sum((c[mask] + epsilon * np.log(mm)) * mm))
