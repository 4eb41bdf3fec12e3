"""Multimarginal Sinkhorn iteration over structured coupling graphs.

One iteration is a full sweep through the constrained nodes in canonical
order: each node's scaling vector is rescaled so that the structured marginal
there matches the prescribed weights, ``u <- u * mu / proj``.  The stopping
statistic is the largest Hilbert projective distance between successive
scalings observed within a sweep; the iteration stops once that maximum drops
to the configured tolerance.

The solver is deterministic: fixed sweep order, all-ones initialization, no
randomness anywhere.  Non-convergence is an outcome, not an exception — the
partial scalings and the full convergence log are returned with
``converged=False`` so callers can inspect or resume.
"""

from __future__ import annotations

import dataclasses
import time
from typing import NamedTuple

import numpy as np

from .core import (
    Axis,
    GraphStructure,
    KernelSet,
    Marginal,
    ScalingFamily,
    build_kernel_set,
    edge_costs,
    hilbert_metric,
)
from .oracle import (
    DEFAULT_SIZE_CAP,
    apply_scalings,
    assemble_cost_tensor,
    assemble_kernel_tensor,
    brute_objective,
    total_mass,
)
from .projections import ProjectionWorkspace


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    """Knobs of the scaling iteration.

    ``sweep_order`` overrides the canonical node enumeration; it must list
    every constrained node exactly once.  ``normalize_costs`` divides all edge
    costs by their global maximum before exponentiation, which is the
    supported way of avoiding kernel underflow (there is no log-domain mode).
    """

    epsilon: float
    tolerance: float = 1e-10
    max_iterations: int = 1000
    sweep_order: tuple[Axis, ...] | None = None
    normalize_costs: bool = True

    def __post_init__(self):
        if not (self.epsilon > 0.0 and np.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be positive and finite, got {self.epsilon!r}")
        if not (self.tolerance > 0.0 and np.isfinite(self.tolerance)):
            raise ValueError(f"tolerance must be positive, got {self.tolerance!r}")
        if int(self.max_iterations) < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations!r}")
        object.__setattr__(self, "max_iterations", int(self.max_iterations))
        if self.sweep_order is not None:
            object.__setattr__(self, "sweep_order",
                               tuple((int(j), int(sig)) for j, sig in self.sweep_order))


@dataclasses.dataclass(frozen=True)
class BridgeSolution:
    """Scalings of the coupling tensor, plus everything needed to use them.

    The coupling itself is never materialized: ``kernels`` and ``scalings``
    determine it, and the projection workspace evaluates any supported
    marginal of it on demand.  ``convergence_log[i]`` is the sweep-``i+1``
    stopping statistic.
    """

    structure: GraphStructure
    kernels: KernelSet
    scalings: ScalingFamily
    marginals: dict[Axis, Marginal]
    convergence_log: tuple[float, ...]
    iterations: int
    converged: bool
    wall_time: float
    config: SolverConfig

    @property
    def epsilon(self) -> float:
        return self.kernels.epsilon

    def workspace(self) -> ProjectionWorkspace:
        """A fresh projection workspace positioned at the stored scalings."""
        return ProjectionWorkspace(self.kernels, self.scalings)


def solve(structure: GraphStructure,
          marginals: dict[Axis, Marginal],
          config: SolverConfig) -> BridgeSolution:
    """Fit the coupling scalings to the prescribed marginals.

    Raises on malformed inputs (wrong keys, zero weights, kernel underflow);
    returns an unconverged solution, never raises, when the iteration budget
    runs out.
    """
    structure.validate_marginals(marginals)
    for key in structure.index_set():
        if np.any(marginals[key].weights <= 0.0):
            raise ValueError(
                f"marginal at {key} has zero-weight support points; the scaling "
                "update divides by the projection, so prune them first"
            )
    if config.sweep_order is None:
        order: tuple[Axis, ...] = tuple(structure.index_set())
    else:
        order = config.sweep_order
        if sorted(order) != sorted(structure.index_set()):
            raise ValueError("sweep_order must enumerate every constrained node exactly once")

    kernels = build_kernel_set(structure, marginals, config.epsilon,
                               normalize_costs=config.normalize_costs)
    start = time.perf_counter()
    ws = ProjectionWorkspace(kernels)
    log: list[float] = []
    converged = False
    for _ in range(config.max_iterations):
        worst = 0.0
        for key in order:
            proj = ws.project(key)
            if not np.all(np.isfinite(proj)) or np.any(proj <= 0.0):
                raise FloatingPointError(
                    f"projection at {key} left the positive cone; the workspace "
                    "state is corrupt (strictly positive kernels and scalings "
                    "cannot produce this)"
                )
            u_old = ws.scaling(key)
            u_new = u_old * (marginals[key].weights / proj)
            worst = max(worst, hilbert_metric(u_new, u_old))
            ws.set_scaling(key, u_new)
        log.append(worst)
        if worst <= config.tolerance:
            converged = True
            break
    wall = time.perf_counter() - start
    return BridgeSolution(
        structure=structure,
        kernels=kernels,
        scalings=ws.scaling_family(),
        marginals=dict(marginals),
        convergence_log=tuple(log),
        iterations=len(log),
        converged=converged,
        wall_time=wall,
        config=config,
    )


def feasibility_residuals(solution: BridgeSolution) -> dict[Axis, float]:
    """L1 gap between each mass-normalized structured marginal and its target."""
    ws = solution.workspace()
    out: dict[Axis, float] = {}
    for key in solution.structure.index_set():
        proj = ws.project(key)
        out[key] = float(np.abs(proj / proj.sum()
                                - solution.marginals[key].weights).sum())
    return out


class ObjectiveReport(NamedTuple):
    value: float
    mass: float


def evaluate_objective(solution: BridgeSolution,
                       size_cap: int = DEFAULT_SIZE_CAP) -> ObjectiveReport:
    """Primal transport objective ``<C + eps*log M, M>`` of the scaled coupling.

    Evaluated by materializing the dense tensor, so this is only available at
    small sizes (a ``ValueError`` names the cap otherwise).  Costs are the ones
    the solve actually used, i.e. divided by the stored global normalizer.
    The coupling's total mass is reported alongside the value; it converges to
    one but is not forced to one mid-run.
    """
    coupling = apply_scalings(assemble_kernel_tensor(solution.kernels, size_cap),
                              solution.scalings)
    costs = edge_costs(solution.structure, solution.marginals)
    scale = solution.kernels.cost_normalizer
    if scale != 1.0:
        costs = {edge: c / scale for edge, c in costs.items()}
    cost_tensor = assemble_cost_tensor(solution.structure, costs, size_cap)
    value = brute_objective(coupling, cost_tensor, solution.epsilon)
    return ObjectiveReport(value, total_mass(coupling))


def converge_metrics(solution: BridgeSolution) -> list[tuple[int, float]]:
    """``(iteration, d_hilbert)`` pairs, iterations counted from 1."""
    return [(i + 1, d) for i, d in enumerate(solution.convergence_log)]


def write_convergence_csv(solution: BridgeSolution, path) -> None:
    """Write the convergence log as ``iteration,d_hilbert`` rows."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("iteration,d_hilbert\n")
        for it, d in converge_metrics(solution):
            fh.write(f"{it},{d!r}\n")
