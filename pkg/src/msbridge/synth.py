"""Synthetic counter-profile generator.

Produces datasets with the qualitative shape of real multi-core profiles --
bursty per-core phases with correlated features, phase boundaries that shift
a little from run to run (which is what makes snapshot marginals
multi-modal), optional linear drift of the mean within a phase, and idle
intervals that emit exact zero vectors -- while staying cheap enough to run
every experiment at desk scale.

The model is deliberately simple: within each phase, samples are independent
Gaussians (truncated at zero) around a possibly drifting mean.  This is not
a microarchitectural simulation; it only has to exercise the transport
pipeline.

Generation is deterministic given the spec's seed.  Each run draws from its
own generator spawned off the root seed, so runs can be produced in any
order or in parallel without changing the output.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .ingest import DEFAULT_FEATURES, ProfileDataset, ProfileRun

_TILE_TOL = 1e-9


def _vector(x, d: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != (d,):
        raise ValueError(f"{name} must have shape ({d},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _covariance(x, d: int) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(d)
    elif arr.ndim == 1:
        if arr.shape != (d,):
            raise ValueError(f"diagonal covariance must have {d} entries")
        arr = np.diag(arr)
    if arr.shape != (d, d):
        raise ValueError(f"covariance must be ({d}, {d}), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or not np.allclose(arr, arr.T):
        raise ValueError("covariance must be finite and symmetric")
    floor = -1e-10 * max(1.0, float(np.abs(arr).max()))
    if np.linalg.eigvalsh(arr).min() < floor:
        raise ValueError("covariance is not positive semidefinite")
    return arr


def _factor(cov: np.ndarray) -> np.ndarray:
    """A matrix L with L L^T = cov, tolerating singular covariances."""
    if not cov.any():
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        eigvals, eigvecs = np.linalg.eigh(cov)
        return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


@dataclasses.dataclass(frozen=True, eq=False)
class Phase:
    """One stationary-or-drifting segment of a core's activity."""

    start: float
    end: float
    mean: np.ndarray
    cov: np.ndarray
    end_mean: np.ndarray | None = None
    jitter_std: float = 0.0

    def __post_init__(self):
        if not self.end > self.start:
            raise ValueError(
                f"phase must have positive length, got [{self.start}, {self.end}]")
        if self.jitter_std < 0.0:
            raise ValueError("jitter_std must be nonnegative")
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", _covariance(self.cov, len(mean)))
        if self.end_mean is not None:
            object.__setattr__(self, "end_mean",
                               _vector(self.end_mean, len(mean), "end_mean"))


@dataclasses.dataclass(frozen=True, eq=False)
class CoreModel:
    phases: tuple[Phase, ...]
    idle: tuple[tuple[float, float], ...] = ()


@dataclasses.dataclass(frozen=True, eq=False)
class SynthSpec:
    n_runs: int
    J: int
    duration_s: float
    sample_period_s: float
    seed: int
    cores: tuple[CoreModel, ...]
    features: tuple[str, ...] = DEFAULT_FEATURES
    context: str = "synthetic"

    def __post_init__(self):
        if self.n_runs < 1 or self.J < 1:
            raise ValueError("n_runs and J must be >= 1")
        if self.duration_s <= 0.0 or self.sample_period_s <= 0.0:
            raise ValueError("duration_s and sample_period_s must be positive")
        if len(self.cores) != self.J:
            raise ValueError(f"expected {self.J} core models, got {len(self.cores)}")
        d = len(self.features)
        for j, core in enumerate(self.cores, start=1):
            if not core.phases:
                raise ValueError(f"core {j} has no phases")
            cursor = 0.0
            for phase in core.phases:
                if abs(phase.start - cursor) > _TILE_TOL:
                    raise ValueError(
                        f"core {j}: phase starting at {phase.start} leaves a "
                        f"gap after {cursor}")
                _vector(phase.mean, d, f"core {j} phase mean")
                _covariance(phase.cov, d)
                if phase.end_mean is not None:
                    _vector(phase.end_mean, d, f"core {j} phase end_mean")
                cursor = phase.end
            if abs(cursor - self.duration_s) > _TILE_TOL:
                raise ValueError(
                    f"core {j}: phases end at {cursor}, not at the "
                    f"duration {self.duration_s}")
            for a, b in core.idle:
                if not 0.0 <= a < b:
                    raise ValueError(f"core {j}: bad idle interval [{a}, {b})")

    @property
    def d(self) -> int:
        return len(self.features)


def _phase_from_dict(raw: dict, d: int) -> Phase:
    return Phase(
        start=float(raw["start"]),
        end=float(raw["end"]),
        mean=_vector(raw["mean"], d, "mean"),
        cov=_covariance(raw["cov"], d),
        end_mean=(None if raw.get("end_mean") is None
                  else _vector(raw["end_mean"], d, "end_mean")),
        jitter_std=float(raw.get("jitter_std", 0.0)),
    )


def spec_from_dict(raw: dict) -> SynthSpec:
    try:
        features = tuple(str(f) for f in raw.get("features", DEFAULT_FEATURES))
        d = len(features)
        cores = tuple(
            CoreModel(
                phases=tuple(_phase_from_dict(p, d) for p in core["phases"]),
                idle=tuple((float(a), float(b)) for a, b in core.get("idle", ())),
            )
            for core in raw["cores"]
        )
        return SynthSpec(
            n_runs=int(raw["n_runs"]),
            J=int(raw["J"]),
            duration_s=float(raw["duration_s"]),
            sample_period_s=float(raw["sample_period_s"]),
            seed=int(raw["seed"]),
            cores=cores,
            features=features,
            context=str(raw.get("context", "synthetic")),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed synth spec: {exc!r}") from None


def spec_to_dict(spec: SynthSpec) -> dict:
    def phase(p: Phase) -> dict:
        out = {"start": p.start, "end": p.end, "mean": p.mean.tolist(),
               "cov": p.cov.tolist(), "jitter_std": p.jitter_std}
        if p.end_mean is not None:
            out["end_mean"] = p.end_mean.tolist()
        return out

    return {
        "n_runs": spec.n_runs,
        "J": spec.J,
        "duration_s": spec.duration_s,
        "sample_period_s": spec.sample_period_s,
        "seed": spec.seed,
        "features": list(spec.features),
        "context": spec.context,
        "cores": [{"phases": [phase(p) for p in core.phases],
                   "idle": [list(iv) for iv in core.idle]}
                  for core in spec.cores],
    }


def load_spec(path) -> SynthSpec:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError("synth spec must be a JSON object")
    return spec_from_dict(raw)


def _sample_grid(spec: SynthSpec) -> np.ndarray:
    num = int(math.floor(spec.duration_s / spec.sample_period_s + 1e-9)) + 1
    return np.arange(num) * spec.sample_period_s


def _generate_run(spec: SynthSpec, index: int,
                  seed: np.random.SeedSequence) -> ProfileRun:
    rng = np.random.default_rng(seed)
    t = _sample_grid(spec)
    times: dict[int, np.ndarray] = {}
    values: dict[int, np.ndarray] = {}
    for j, core in enumerate(spec.cores, start=1):
        nominal = np.array([p.end for p in core.phases[:-1]])
        jitter = np.array([p.jitter_std for p in core.phases[:-1]])
        shifted = nominal + rng.normal(0.0, 1.0, size=nominal.shape) * jitter
        cuts = np.maximum.accumulate(np.clip(shifted, 0.0, spec.duration_s))
        which = np.searchsorted(cuts, t, side="right")

        noise = rng.standard_normal((len(t), spec.d))
        vals = np.empty_like(noise)
        bounds = np.concatenate([[0.0], cuts, [spec.duration_s]])
        for p, phase in enumerate(core.phases):
            mask = which == p
            if not mask.any():
                continue
            mean = np.broadcast_to(phase.mean, (mask.sum(), spec.d))
            if phase.end_mean is not None:
                span = bounds[p + 1] - bounds[p]
                frac = (np.clip((t[mask] - bounds[p]) / span, 0.0, 1.0)
                        if span > 0.0 else np.zeros(mask.sum()))
                mean = mean + frac[:, None] * (phase.end_mean - phase.mean)
            vals[mask] = mean + noise[mask] @ _factor(phase.cov).T
        vals = np.maximum(vals, 0.0)

        for a, b in core.idle:
            mask = t >= a if b >= spec.duration_s else (t >= a) & (t < b)
            vals[mask] = 0.0

        assert np.all(vals >= 0.0)
        times[j] = t.copy()
        values[j] = vals
    return ProfileRun(source=f"run_{index:04d}.csv", times=times, values=values)


def generate(spec: SynthSpec) -> ProfileDataset:
    """Draw the dataset described by ``spec`` (bitwise deterministic)."""
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_runs)
    runs = tuple(_generate_run(spec, i, children[i])
                 for i in range(spec.n_runs))
    return ProfileDataset(runs=runs, J=spec.J,
                          sample_period_s=spec.sample_period_s,
                          feature_names=spec.features, context=spec.context)


def write_dataset(dataset: ProfileDataset, out_dir) -> Path:
    """Write runs + manifest in the ingestion wire format; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ",".join(("time_s", "cpu") + dataset.feature_names)
    for run in dataset.runs:
        cores = sorted(run.times)
        t_all = np.concatenate([run.times[j] for j in cores])
        cpu_all = np.concatenate([np.full(len(run.times[j]), j) for j in cores])
        val_all = np.vstack([run.values[j] for j in cores])
        order = np.lexsort((cpu_all, t_all))
        lines = [header]
        for i in order:
            cells = [repr(float(t_all[i])), str(int(cpu_all[i]))]
            cells += [repr(float(v)) for v in val_all[i]]
            lines.append(",".join(cells))
        (out / run.source).write_text("\n".join(lines) + "\n", encoding="utf-8")

    manifest = {
        "runs": [run.source for run in dataset.runs],
        "J": dataset.J,
        "sample_period_s": dataset.sample_period_s,
        "features": list(dataset.feature_names),
        "context": dataset.context,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path
