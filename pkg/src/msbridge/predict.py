"""Bridge extraction and displacement interpolation at arbitrary query times.

A converged solution couples the marginals of consecutive snapshots through
bimarginal bridge matrices.  To predict the distribution at a time between
two snapshots, mass is moved along each bridge pairing by the elapsed
fraction of the interval: pair (r, l) contributes a point
``(1-lam) * x_r + lam * y_l`` carrying the bridge weight.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from ._kmeans import weighted_kmeans
from .core import BARYCENTRIC, PATH, Axis, GraphStructure, Marginal
from .metrics import DEFAULT_SUPPORT_CAP, wasserstein2
from .sinkhorn import BridgeSolution

# bridge entries below this fraction of the largest entry carry no usable
# mass and only bloat the n*n support
PRUNE_RELATIVE_WEIGHT = 1e-15


@dataclasses.dataclass(frozen=True)
class PredictedDistribution:
    """A weighted point cloud predicted at ``query_time`` for one core.

    ``bracketing`` is ``(sigma, sigma + 1, lam)``: the snapshot pair whose
    bridge produced the prediction and the interpolation fraction within it.
    """

    points: np.ndarray
    weights: np.ndarray
    query_time: float
    core: int
    bracketing: tuple[int, int, float]

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if points.ndim != 2 or weights.ndim != 1 or len(points) != len(weights):
            raise ValueError("points must be (n, d) with one weight per point")
        if np.any(weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(float(weights.sum()) - 1.0) > 1e-10:
            raise ValueError("weights must sum to 1 within 1e-10")
        sigma, sigma_next, lam = self.bracketing
        if sigma_next != sigma + 1:
            raise ValueError("bracketing must name consecutive snapshots")
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"interpolation fraction must be in [0, 1], got {lam!r}")
        points = points.copy()
        weights = weights.copy()
        points.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "query_time", float(self.query_time))
        object.__setattr__(self, "bracketing", (int(sigma), int(sigma_next), float(lam)))

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def as_marginal(self) -> Marginal:
        """Aggregate duplicate support points and return a plain marginal."""
        unique, inverse = np.unique(self.points, axis=0, return_inverse=True)
        weights = np.bincount(inverse, weights=self.weights, minlength=len(unique))
        return Marginal(unique, weights / weights.sum(), time=self.query_time)

    def consolidated(self, max_points: int = DEFAULT_SUPPORT_CAP,
                     seed: int = 0) -> Marginal:
        """A marginal with at most ``max_points`` support points.

        Exact duplicate aggregation first; if the support is still larger,
        it is quantized by deterministic weighted k-means (cluster centers
        weighted by their member mass).
        """
        marginal = self.as_marginal()
        if marginal.n <= max_points:
            return marginal
        centers, cluster_w = weighted_kmeans(marginal.points, marginal.weights,
                                             max_points, seed=seed)
        keep = cluster_w > 0.0
        weights = cluster_w[keep]
        return Marginal(centers[keep], weights / weights.sum(),
                        time=self.query_time)


def bridge_keys(structure: GraphStructure, core: int, sigma: int) -> tuple[Axis, Axis]:
    """The two constrained nodes whose coupling bridges snapshots sigma, sigma+1."""
    s = structure.s
    if not 1 <= sigma <= s - 1:
        raise ValueError(f"sigma must be in 1..{s - 1}, got {sigma}")
    if structure.variant == PATH:
        if core != 1:
            raise ValueError("path structure has a single core, j=1")
        return (1, sigma), (1, sigma + 1)
    if structure.variant == BARYCENTRIC:
        if not 0 <= core <= structure.J:
            raise ValueError(f"core must be in 0..{structure.J}, got {core}")
        return (core, sigma), (core, sigma + 1)
    if not 1 <= core <= structure.J:
        raise ValueError(f"core must be in 1..{structure.J}, got {core}")
    left = (1, 1) if sigma == 1 else (core, sigma)
    right = (1, s) if sigma == s - 1 else (core, sigma + 1)
    return left, right


def bridge_matrix(solution: BridgeSolution, core: int, sigma: int) -> np.ndarray:
    """Bimarginal coupling between a core's snapshots sigma and sigma+1.

    Path and series-parallel bridges are direct structured projections.  The
    barycentric graph has no direct edge between (j, sigma) and (j, sigma+1);
    the coupling factorizes through the two barycenter nodes on the unique
    tree path, so it is assembled as spoke -> chain -> spoke with the
    intermediate masses divided out (verified against the dense oracle).
    """
    structure = solution.structure
    left, right = bridge_keys(structure, core, sigma)
    ws = solution.workspace()
    if structure.variant != BARYCENTRIC or core == 0:
        return ws.project_pair(left, right)
    spoke_l = ws.project_pair((0, sigma), (core, sigma))
    chain = ws.project_pair((0, sigma), (0, sigma + 1))
    spoke_r = ws.project_pair((0, sigma + 1), (core, sigma + 1))
    m1 = spoke_l.sum(axis=1)
    m2 = spoke_r.sum(axis=1)
    return spoke_l.T @ (chain / m1[:, None] / m2[None, :]) @ spoke_r


def interpolate(solution: BridgeSolution, core: int, tau: float,
                snapshots) -> PredictedDistribution:
    """Displacement-interpolated distribution of ``core`` at time ``tau``.

    ``snapshots`` are the s strictly increasing snapshot times; ``tau`` must
    lie in [snapshots[0], snapshots[-1]] (the right endpoint maps to the last
    segment with fraction 1).
    """
    times = np.asarray(snapshots, dtype=np.float64)
    s = solution.structure.s
    if times.shape != (s,):
        raise ValueError(f"expected {s} snapshot times, got {times.shape}")
    if np.any(np.diff(times) <= 0.0):
        raise ValueError("snapshot times must be strictly increasing")
    tau = float(tau)
    if not times[0] <= tau <= times[-1]:
        raise ValueError(
            f"query time {tau!r} outside the covered range "
            f"[{times[0]!r}, {times[-1]!r}]"
        )
    sigma = int(np.searchsorted(times, tau, side="right"))  # 1-based left index
    sigma = min(sigma, s - 1)
    lam = (tau - times[sigma - 1]) / (times[sigma] - times[sigma - 1])

    matrix = bridge_matrix(solution, core, sigma)
    weights = matrix.ravel() / matrix.sum()
    left, right = bridge_keys(solution.structure, core, sigma)
    x = solution.marginals[left].points
    y = solution.marginals[right].points
    points = ((1.0 - lam) * x)[:, None, :] + (lam * y)[None, :, :]
    points = points.reshape(-1, x.shape[1])

    keep = weights >= PRUNE_RELATIVE_WEIGHT * weights.max()
    points, weights = points[keep], weights[keep]
    return PredictedDistribution(
        points=points,
        weights=weights / weights.sum(),
        query_time=tau,
        core=core,
        bracketing=(sigma, sigma + 1, lam),
    )


def prediction_error(predicted: PredictedDistribution, measured: Marginal,
                     support_cap: int = DEFAULT_SUPPORT_CAP) -> float:
    """2-Wasserstein distance between a prediction and a measured marginal."""
    return wasserstein2(predicted.consolidated(support_cap), measured,
                        support_cap=support_cap)


def write_prediction_csv(prediction: PredictedDistribution, path) -> None:
    """CSV with a JSON comment header, coordinate columns x1..xd, and weight."""
    sigma, sigma_next, lam = prediction.bracketing
    header = {
        "query_time": prediction.query_time,
        "core": prediction.core,
        "sigma": sigma,
        "sigma_next": sigma_next,
        "lambda": lam,
    }
    d = prediction.dim
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        fh.write(",".join(f"x{i + 1}" for i in range(d)) + ",weight\n")
        for row, w in zip(prediction.points, prediction.weights):
            fh.write(",".join(repr(float(v)) for v in row) + f",{float(w)!r}\n")


def read_prediction_csv(path) -> PredictedDistribution:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError("missing JSON header line")
        header = json.loads(first[2:])
        fh.readline()  # column names
        rows = [line.split(",") for line in fh.read().splitlines() if line]
    data = np.array([[float(v) for v in row] for row in rows])
    return PredictedDistribution(
        points=data[:, :-1],
        weights=data[:, -1],
        query_time=header["query_time"],
        core=header["core"],
        bracketing=(header["sigma"], header["sigma_next"], header["lambda"]),
    )
