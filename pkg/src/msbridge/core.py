"""Shared primitives: marginals, coupling-graph structures, Gibbs kernels, scalings.

Everything downstream (projections, the Sinkhorn loop, prediction) works with
the types defined here.  A problem instance is a graph structure together with
one discrete marginal per structure node and one Gibbs kernel per structure
edge.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np

# A structure node is addressed by (core j, snapshot sigma), both 1-based.
# j == 0 is reserved for the barycenter chain of the barycentric structure.
Axis = tuple[int, int]

PATH = "path"
BARYCENTRIC = "barycentric"
SERIES_PARALLEL = "series_parallel"
_VARIANTS = (PATH, BARYCENTRIC, SERIES_PARALLEL)

_VARIANT_ALIASES = {
    "path": PATH,
    "bc": BARYCENTRIC,
    "barycentric": BARYCENTRIC,
    "sp": SERIES_PARALLEL,
    "series_parallel": SERIES_PARALLEL,
    "series-parallel": SERIES_PARALLEL,
}

_WEIGHT_SUM_TOL = 1e-12


class KernelUnderflowError(ValueError):
    """A Gibbs kernel entry underflowed to exactly zero."""


def canonical_variant(name: str) -> str:
    """Map a user-facing structure name (including aliases) to its canonical form."""
    try:
        return _VARIANT_ALIASES[name.strip().lower()]
    except KeyError:
        raise ValueError(
            f"unknown structure variant {name!r}; expected one of {sorted(_VARIANT_ALIASES)}"
        ) from None


def _as_float_array(x, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclasses.dataclass(frozen=True)
class Marginal:
    """A weighted point cloud: support ``points`` (n, d) with ``weights`` (n,).

    Weights are nonnegative and sum to one.  ``label`` and ``time`` are
    optional bookkeeping used when the marginal was cut out of a profile
    dataset at a snapshot instant.
    """

    points: np.ndarray
    weights: np.ndarray
    label: Axis | None = None
    time: float | None = None

    def __post_init__(self):
        points = _as_float_array(self.points, "points", 2)
        weights = _as_float_array(self.weights, "weights", 1)
        if len(points) != len(weights):
            raise ValueError(
                f"points ({len(points)}) and weights ({len(weights)}) disagree in length"
            )
        if np.any(weights < 0.0):
            raise ValueError("weights must be nonnegative")
        total = float(weights.sum())
        if abs(total - 1.0) > _WEIGHT_SUM_TOL:
            raise ValueError(f"weights must sum to 1 (got {total!r})")
        points = points.copy()
        weights = weights.copy()
        points.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        if self.time is not None:
            object.__setattr__(self, "time", float(self.time))

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def build_empirical_marginal(samples, label: Axis | None = None,
                             time: float | None = None) -> Marginal:
    """Uniformly weighted empirical distribution over ``samples`` (n, d)."""
    pts = _as_float_array(samples, "samples", 2)
    n = len(pts)
    return Marginal(pts, np.full(n, 1.0 / n), label=label, time=time)


def squared_euclidean_cost(x, y) -> np.ndarray:
    """Pairwise squared Euclidean distances, shape (len(x), len(y)).

    Computed from explicit coordinate differences so that the diagonal of
    ``squared_euclidean_cost(x, x)`` is exactly zero and the matrix is exactly
    symmetric under argument swap.
    """
    xa = _as_float_array(x, "x", 2)
    ya = _as_float_array(y, "y", 2)
    if xa.shape[1] != ya.shape[1]:
        raise ValueError(
            f"point dimensions disagree: {xa.shape[1]} vs {ya.shape[1]}"
        )
    diff = xa[:, None, :] - ya[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def gibbs_kernel(cost, epsilon: float, normalize: bool = True) -> np.ndarray:
    """Entrywise ``exp(-C'/epsilon)`` with ``C' = C / max(C)`` when ``normalize``.

    Raises :class:`KernelUnderflowError` if any entry underflows to zero,
    since downstream scaling iterations require strictly positive kernels.
    """
    c = _as_float_array(cost, "cost", 2)
    if np.any(c < 0.0):
        raise ValueError("cost entries must be nonnegative")
    if not (epsilon > 0.0 and np.isfinite(epsilon)):
        raise ValueError(f"epsilon must be positive and finite, got {epsilon!r}")
    if normalize:
        cmax = float(c.max())
        if cmax > 0.0:
            c = c / cmax
    k = np.exp(-c / epsilon)
    if np.any(k == 0.0):
        raise KernelUnderflowError(
            "Gibbs kernel underflowed to zero; increase epsilon or enable "
            "cost normalization"
        )
    return k


def hilbert_metric(u, v) -> float:
    """Hilbert projective distance ``log(max_i(u_i/v_i) / min_i(u_i/v_i))``.

    Zero exactly when ``u`` and ``v`` are proportional; invariant to positive
    rescaling of either argument.
    """
    ua = _as_float_array(u, "u", 1)
    va = _as_float_array(v, "v", 1)
    if ua.shape != va.shape:
        raise ValueError(f"shape mismatch: {ua.shape} vs {va.shape}")
    if np.any(ua <= 0.0) or np.any(va <= 0.0):
        raise ValueError("hilbert_metric requires strictly positive vectors")
    r = ua / va
    return float(np.log(r.max() / r.min()))


@dataclasses.dataclass(frozen=True)
class GraphStructure:
    """Topology of the coupling graph.

    variant
        ``"path"``: one core observed at ``s`` snapshots, chained in time.
        ``"barycentric"``: ``J`` cores, each snapshot tied to a phantom
        barycenter node (core index 0); barycenters chained in time.
        ``"series_parallel"``: ``J`` core chains sharing the two terminal
        nodes ``(1, 1)`` and ``(1, s)``.
    s
        Number of snapshots (>= 2).
    J
        Number of cores (path requires ``J == 1``).
    n0
        Barycenter support size (barycentric only).
    """

    variant: str
    s: int
    J: int = 1
    n0: int | None = None

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; expected one of {_VARIANTS}"
            )
        if self.s < 2:
            raise ValueError(f"need at least two snapshots, got s={self.s}")
        if self.J < 1:
            raise ValueError(f"core count must be positive, got J={self.J}")
        if self.variant == PATH and self.J != 1:
            raise ValueError("path structure requires J=1")
        if self.variant == BARYCENTRIC:
            if self.n0 is None or self.n0 < 1:
                raise ValueError("barycentric structure requires n0 >= 1")
        elif self.n0 is not None:
            raise ValueError(f"n0 is only meaningful for barycentric, got {self.n0}")
        if self.variant == SERIES_PARALLEL and self.s == 2:
            warnings.warn(
                "series-parallel with s=2 degenerates to a single edge bundle "
                "between the two terminals",
                stacklevel=2,
            )

    def index_set(self) -> list[Axis]:
        """Constrained nodes (j, sigma), in canonical sweep/axis order."""
        s, J = self.s, self.J
        if self.variant == PATH:
            return [(1, sig) for sig in range(1, s + 1)]
        if self.variant == BARYCENTRIC:
            nodes = [(0, sig) for sig in range(1, s + 1)]
            nodes += [(j, sig) for j in range(1, J + 1) for sig in range(1, s + 1)]
            return nodes
        nodes = [(1, 1)]
        nodes += [(j, sig) for j in range(1, J + 1) for sig in range(2, s)]
        nodes.append((1, s))
        return nodes

    @property
    def size(self) -> int:
        """|index_set|: s, (J+1)s, or J(s-2)+2 depending on the variant."""
        if self.variant == PATH:
            return self.s
        if self.variant == BARYCENTRIC:
            return (self.J + 1) * self.s
        return self.J * (self.s - 2) + 2

    def axis_order(self) -> dict[Axis, int]:
        return {key: i for i, key in enumerate(self.index_set())}

    def edges(self) -> list[tuple]:
        """Edge keys in a fixed order.

        ``("chain", sigma)`` links consecutive snapshots (path and the
        barycentric barycenter chain), ``("spoke", j, sigma)`` links
        barycenter ``sigma`` to core ``j`` at ``sigma``, and
        ``("leg", j, sigma)`` is the sigma-th edge of core ``j``'s chain in
        the series-parallel structure.
        """
        s, J = self.s, self.J
        if self.variant == PATH:
            return [("chain", sig) for sig in range(1, s)]
        if self.variant == BARYCENTRIC:
            out: list[tuple] = [("chain", sig) for sig in range(1, s)]
            out += [("spoke", j, sig) for j in range(1, J + 1) for sig in range(1, s + 1)]
            return out
        return [("leg", j, sig) for j in range(1, J + 1) for sig in range(1, s)]

    def edge_nodes(self, edge: tuple) -> tuple[Axis, Axis]:
        """(row node, column node) of an edge's kernel matrix."""
        s = self.s
        if edge[0] == "chain":
            sig = edge[1]
            j = 1 if self.variant == PATH else 0
            return (j, sig), (j, sig + 1)
        if edge[0] == "spoke":
            _, j, sig = edge
            return (0, sig), (j, sig)
        _, j, sig = edge
        left = (1, 1) if sig == 1 else (j, sig)
        right = (1, s) if sig == s - 1 else (j, sig + 1)
        return left, right

    def validate_marginals(self, marginals: dict[Axis, Marginal]) -> None:
        """Check that ``marginals`` matches the index set and is internally consistent."""
        expected = set(self.index_set())
        got = set(marginals)
        if got != expected:
            missing = sorted(expected - got)
            extra = sorted(got - expected)
            raise ValueError(
                f"marginal keys do not match the structure (missing {missing}, "
                f"unexpected {extra})"
            )
        dims = {m.dim for m in marginals.values()}
        if len(dims) != 1:
            raise ValueError(f"marginals disagree on point dimension: {sorted(dims)}")
        for key, m in marginals.items():
            if m.label is not None and m.label != key:
                raise ValueError(f"marginal at {key} carries label {m.label}")
        if self.variant == BARYCENTRIC:
            for sig in range(1, self.s + 1):
                n = marginals[(0, sig)].n
                if n != self.n0:
                    raise ValueError(
                        f"barycenter support at sigma={sig} has {n} points, "
                        f"structure says n0={self.n0}"
                    )


@dataclasses.dataclass(frozen=True)
class KernelSet:
    """One strictly positive Gibbs kernel per structure edge.

    ``cost_normalizer`` is the single divisor applied to every raw edge cost
    before exponentiation (1.0 when normalization was disabled).
    """

    structure: GraphStructure
    epsilon: float
    kernels: dict[tuple, np.ndarray]
    cost_normalizer: float = 1.0

    def __post_init__(self):
        expected = set(self.structure.edges())
        if set(self.kernels) != expected:
            raise ValueError("kernel keys do not match the structure's edges")
        for edge, k in self.kernels.items():
            if k.ndim != 2:
                raise ValueError(f"kernel {edge} is not a matrix")
            if np.any(k <= 0.0) or not np.all(np.isfinite(k)):
                raise ValueError(f"kernel {edge} must be strictly positive and finite")
        if not (self.cost_normalizer > 0.0):
            raise ValueError("cost_normalizer must be positive")

    def node_sizes(self) -> dict[Axis, int]:
        """Support size at each node, inferred from kernel shapes."""
        sizes: dict[Axis, int] = {}
        for edge, k in self.kernels.items():
            row, col = self.structure.edge_nodes(edge)
            for node, size in ((row, k.shape[0]), (col, k.shape[1])):
                if sizes.setdefault(node, size) != size:
                    raise ValueError(f"inconsistent sizes at node {node}")
        return sizes


def edge_costs(structure: GraphStructure,
               marginals: dict[Axis, Marginal]) -> dict[tuple, np.ndarray]:
    """Raw squared-Euclidean cost matrices for every structure edge."""
    structure.validate_marginals(marginals)
    costs: dict[tuple, np.ndarray] = {}
    for edge in structure.edges():
        row, col = structure.edge_nodes(edge)
        costs[edge] = squared_euclidean_cost(marginals[row].points,
                                             marginals[col].points)
    return costs


def build_kernel_set(structure: GraphStructure,
                     marginals: dict[Axis, Marginal],
                     epsilon: float,
                     normalize_costs: bool = True) -> KernelSet:
    """Gibbs kernels for every edge, sharing one global cost normalizer.

    The normalizer is the maximum cost entry across *all* edges, so that the
    relative geometry between edges is preserved; per-edge normalization
    would distort it.
    """
    costs = edge_costs(structure, marginals)
    normalizer = 1.0
    if normalize_costs:
        global_max = max(float(c.max()) for c in costs.values())
        if global_max > 0.0:
            normalizer = global_max
    kernels = {
        edge: gibbs_kernel(c / normalizer, epsilon, normalize=False)
        for edge, c in costs.items()
    }
    return KernelSet(structure, float(epsilon), kernels, normalizer)


@dataclasses.dataclass(frozen=True)
class ScalingFamily:
    """One strictly positive scaling vector per constrained node."""

    structure: GraphStructure
    u: dict[Axis, np.ndarray]

    def __post_init__(self):
        expected = set(self.structure.index_set())
        if set(self.u) != expected:
            raise ValueError("scaling keys do not match the structure's index set")
        for key, vec in self.u.items():
            v = np.asarray(vec, dtype=np.float64)
            if v.ndim != 1 or v.size == 0:
                raise ValueError(f"scaling at {key} must be a non-empty vector")
            if np.any(v <= 0.0) or not np.all(np.isfinite(v)):
                raise ValueError(f"scaling at {key} must be strictly positive and finite")

    @classmethod
    def ones(cls, structure: GraphStructure, sizes: dict[Axis, int]) -> "ScalingFamily":
        return cls(structure, {key: np.ones(sizes[key]) for key in structure.index_set()})
