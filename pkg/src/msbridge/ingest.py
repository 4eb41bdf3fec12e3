"""Profile-data ingestion: per-run counter CSVs -> snapshot marginals.

Wire format
-----------
A dataset is a manifest plus one CSV per profiled run.

Manifest (JSON)::

    { "runs": ["run_0000.csv", ...], "J": 2, "sample_period_s": 0.01,
      "features": ["instructions", "llc_requests", "llc_misses"],
      "context": "free text" }

Run CSV: header ``time_s,cpu,<feature...>`` followed by one row per
(sample time, core).  ``cpu`` is 1-based and must lie in 1..J; timestamps
must be strictly increasing per core within a run.  The feature columns must
match the manifest --- the canonical trio is instructions retired, LLC
requests and LLC misses, but any fixed set works and d is inferred from it.

Snapshot extraction reads each run by zero-order hold: the value at query
time tau is the last sample at or before tau.  Runs whose recording stops
before tau are dropped from the affected marginals (or abort the whole
extraction when ``strict=True``), mirroring how asynchronous run lengths are
handled upstream.

Feature normalization: by default every feature is min-max rescaled with a
single global range taken over the whole dataset, so marginals at different
times and cores stay mutually comparable and all-zero idle samples remain
exactly zero whenever the global minimum is zero.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import warnings
from pathlib import Path

import numpy as np

from ._kmeans import weighted_kmeans
from .core import (
    BARYCENTRIC,
    PATH,
    SERIES_PARALLEL,
    Axis,
    GraphStructure,
    Marginal,
    canonical_variant,
)

DEFAULT_FEATURES = ("instructions", "llc_requests", "llc_misses")

_MANIFEST_KEYS = ("runs", "J", "sample_period_s", "features")


class FormatError(ValueError):
    """A manifest or run file violates the wire format."""


@dataclasses.dataclass(frozen=True)
class ProfileRun:
    """One profiled execution: per-core sample times and counter vectors."""

    source: str
    times: dict[int, np.ndarray]
    values: dict[int, np.ndarray]

    def __post_init__(self):
        for core, t in self.times.items():
            t.flags.writeable = False
            self.values[core].flags.writeable = False
            if len(t) != len(self.values[core]):
                raise ValueError(f"{self.source}: cpu {core} times/values mismatch")

    def duration(self, core: int) -> float:
        return float(self.times[core][-1])


@dataclasses.dataclass(frozen=True)
class ProfileDataset:
    """An immutable collection of runs sharing core count and feature set."""

    runs: tuple[ProfileRun, ...]
    J: int
    sample_period_s: float
    feature_names: tuple[str, ...]
    context: str = ""

    def __post_init__(self):
        if not self.runs:
            raise FormatError("no runs found")
        if self.J < 1:
            raise FormatError(f"J must be >= 1, got {self.J}")
        if self.sample_period_s <= 0.0:
            raise FormatError("sample_period_s must be positive")
        if not self.feature_names:
            raise FormatError("feature list must be non-empty")
        cores = set(range(1, self.J + 1))
        for run in self.runs:
            if set(run.times) != cores:
                missing = sorted(cores - set(run.times))
                raise FormatError(f"{run.source}: missing cpu(s) {missing}")
            for core in cores:
                if run.values[core].shape[1] != self.d:
                    raise FormatError(
                        f"{run.source}: cpu {core} has "
                        f"{run.values[core].shape[1]} features, expected {self.d}")

    @property
    def n(self) -> int:
        return len(self.runs)

    @property
    def d(self) -> int:
        return len(self.feature_names)

    @functools.cached_property
    def feature_ranges(self) -> tuple[np.ndarray, np.ndarray]:
        """Global per-feature (min, max) over every run, core and sample."""
        stacked = np.vstack([run.values[core]
                             for run in self.runs for core in sorted(run.values)])
        return stacked.min(axis=0), stacked.max(axis=0)


def _parse_run(path: Path, J: int, features: tuple[str, ...]) -> ProfileRun:
    expected_header = ",".join(("time_s", "cpu") + features)
    with open(path, encoding="utf-8", newline="") as fh:
        header = fh.readline().strip()
        if header != expected_header:
            raise FormatError(
                f"{path.name}:1: header {header!r} does not match manifest "
                f"features (expected {expected_header!r})")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # empty body raises below instead
                table = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise FormatError(f"{path.name}: {exc}") from None
    if table.size == 0:
        raise FormatError(f"{path.name}: no data rows")
    if table.shape[1] != 2 + len(features):
        raise FormatError(
            f"{path.name}: rows have {table.shape[1]} columns, "
            f"expected {2 + len(features)}")
    bad = np.flatnonzero(~np.all(np.isfinite(table), axis=1))
    if bad.size:
        raise FormatError(f"{path.name}:{bad[0] + 2}: non-finite value")

    cpus = table[:, 1]
    int_cpus = cpus.astype(np.int64)
    bad = np.flatnonzero((cpus != int_cpus) | (int_cpus < 1) | (int_cpus > J))
    if bad.size:
        raise FormatError(
            f"{path.name}:{bad[0] + 2}: cpu {cpus[bad[0]]!r} outside 1..{J}")

    times: dict[int, np.ndarray] = {}
    values: dict[int, np.ndarray] = {}
    for core in range(1, J + 1):
        rows = np.flatnonzero(int_cpus == core)
        if rows.size == 0:
            continue
        t = table[rows, 0]
        bad = np.flatnonzero(np.diff(t) <= 0.0)
        if bad.size:
            raise FormatError(
                f"{path.name}:{rows[bad[0] + 1] + 2}: non-increasing "
                f"timestamp for cpu {core}")
        times[core] = t.copy()
        values[core] = table[rows, 2:].copy()
    return ProfileRun(source=path.name, times=times, values=values)


def load_profiles(path) -> ProfileDataset:
    """Load a dataset from a manifest file or a directory containing one."""
    path = Path(path)
    if path.is_dir():
        manifest_path = path / "manifest.json"
        if not manifest_path.exists():
            raise FormatError(f"no runs found: {path} has no manifest.json")
    else:
        manifest_path = path
        if not manifest_path.exists():
            raise FormatError(f"manifest {manifest_path} does not exist")

    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path.name}: invalid JSON ({exc})") from None
    if not isinstance(manifest, dict):
        raise FormatError(f"{manifest_path.name}: manifest must be a JSON object")
    missing = [k for k in _MANIFEST_KEYS if k not in manifest]
    if missing:
        raise FormatError(f"{manifest_path.name}: missing keys {missing}")
    run_paths = manifest["runs"]
    if not isinstance(run_paths, list) or not run_paths:
        raise FormatError(f"{manifest_path.name}: no runs found")
    features = tuple(str(f) for f in manifest["features"])

    base = manifest_path.parent
    J = int(manifest["J"])
    runs = tuple(_parse_run(base / rel, J, features) for rel in run_paths)
    return ProfileDataset(
        runs=runs,
        J=J,
        sample_period_s=float(manifest["sample_period_s"]),
        feature_names=features,
        context=str(manifest.get("context", "")),
    )


def _zoh_index(times: np.ndarray, tau: float) -> int:
    """Index of the last sample at or before ``tau``; -1 when none exists."""
    return int(np.searchsorted(times, tau, side="right")) - 1


def snapshot_marginals(dataset: ProfileDataset, times, cores=None, *,
                       strict: bool = False,
                       normalize: bool = True) -> dict[Axis, Marginal]:
    """Cut empirical marginals out of the dataset at the given snapshot times.

    Returns ``{(j, sigma): Marginal}`` for every requested core j and
    1-based snapshot index sigma, each supported on one counter vector per
    run (zero-order hold) with uniform weights.
    """
    taus = np.asarray(times, dtype=np.float64)
    if taus.ndim != 1 or taus.size < 1:
        raise ValueError("times must be a non-empty 1-D sequence")
    if np.any(np.diff(taus) <= 0.0):
        raise ValueError("times must be strictly increasing")
    if cores is None:
        cores = range(1, dataset.J + 1)
    cores = [int(j) for j in cores]
    if len(set(cores)) != len(cores):
        raise ValueError("duplicate cores requested")
    for j in cores:
        if not 1 <= j <= dataset.J:
            raise ValueError(f"core {j} outside 1..{dataset.J}")

    if normalize:
        lo, hi = dataset.feature_ranges
        scale = np.where(hi > lo, hi - lo, 1.0)
    else:
        lo, scale = 0.0, 1.0

    out: dict[Axis, Marginal] = {}
    for j in cores:
        for sigma, tau in enumerate(taus, start=1):
            rows = []
            short: list[str] = []
            for run in dataset.runs:
                t = run.times[j]
                idx = _zoh_index(t, tau)
                if idx < 0 or tau > t[-1]:
                    short.append(f"{run.source} (cpu {j} spans "
                                 f"[{t[0]:g}, {t[-1]:g}], tau={tau:g})")
                    continue
                rows.append(run.values[j][idx])
            if short and strict:
                raise ValueError(
                    "runs do not cover the requested snapshot times: "
                    + "; ".join(short))
            if not rows:
                raise ValueError(f"no run covers tau={tau:g} on core {j}")
            points = (np.asarray(rows) - lo) / scale
            n = len(points)
            out[(j, sigma)] = Marginal(points, np.full(n, 1.0 / n),
                                       label=(j, sigma), time=float(tau))
    return out


def barycenter_supports(marginals, n0: int, seed: int = 0) -> Marginal:
    """Uniform marginal on ``n0`` points clustered from pooled per-core samples.

    The inputs are the per-core marginals at one snapshot (a single one is
    accepted for the degenerate one-core case); the result carries label
    (0, sigma) when the inputs agree on sigma.  Deterministic given the seed
    and invariant to the core order.
    """
    pool = list(marginals)
    if not pool:
        raise ValueError("need at least one per-core marginal to pool")
    dims = {m.dim for m in pool}
    if len(dims) != 1:
        raise ValueError(f"marginals disagree in dimension: {sorted(dims)}")
    points = np.vstack([m.points for m in pool])
    if n0 > len(points):
        raise ValueError(
            f"n0={n0} exceeds the pooled point count {len(points)}")
    weights = np.concatenate([m.weights for m in pool]) / len(pool)
    centers, _ = weighted_kmeans(points, weights, k=n0, seed=seed)

    sigmas = {m.label[1] for m in pool if m.label is not None}
    label = (0, sigmas.pop()) if len(sigmas) == 1 else None
    times = {m.time for m in pool if m.time is not None}
    time = times.pop() if len(times) == 1 else None
    return Marginal(centers, np.full(n0, 1.0 / n0), label=label, time=time)


def assemble_problem(dataset: ProfileDataset, variant: str, times, *,
                     n0: int | None = None, seed: int = 0,
                     strict: bool = False, normalize: bool = True,
                     ) -> tuple[GraphStructure, dict[Axis, Marginal]]:
    """Snapshot the dataset and key the marginals by a coupling structure.

    - path: single-core chain; requires a J=1 dataset.
    - barycentric: per-core snapshots for every core, plus one phantom
      marginal per snapshot whose ``n0`` support points are clustered from
      the pooled per-core samples (seeded, deterministic).
    - series_parallel: the shared terminal marginals are core 1's first and
      last snapshots; every core contributes its interior snapshots.
    """
    variant = canonical_variant(variant)
    taus = np.asarray(times, dtype=np.float64)
    s = taus.size
    if s < 2:
        raise ValueError("need at least two snapshot times")

    if variant == PATH:
        if dataset.J != 1:
            raise ValueError(
                f"path structure requires a single-core dataset, got J={dataset.J}")
        structure = GraphStructure(PATH, s=s)
        marginals = snapshot_marginals(dataset, taus, cores=[1],
                                       strict=strict, normalize=normalize)
        return structure, marginals

    per_core = snapshot_marginals(dataset, taus, strict=strict,
                                  normalize=normalize)
    if variant == BARYCENTRIC:
        if n0 is None:
            raise ValueError("the barycentric structure needs n0 (phantom "
                             "marginal support size)")
        structure = GraphStructure(BARYCENTRIC, s=s, J=dataset.J, n0=n0)
        marginals = dict(per_core)
        for sigma in range(1, s + 1):
            marginals[(0, sigma)] = barycenter_supports(
                [per_core[(j, sigma)] for j in range(1, dataset.J + 1)],
                n0=n0, seed=seed)
        return structure, marginals

    structure = GraphStructure(SERIES_PARALLEL, s=s, J=dataset.J)
    marginals = {key: per_core[key] for key in structure.index_set()}
    return structure, marginals
