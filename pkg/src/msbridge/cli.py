"""Command-line front end: synth -> solve -> predict -> validate.

Artifacts
---------
``msbridge solve`` writes three files next to each other: the solution
(JSON header line + raw float64 blocks, see below), a convergence CSV
(``iteration,d_hilbert``) and a run record JSON.  ``predict`` turns a stored
solution into a prediction CSV; ``validate`` scores prediction CSVs against
holdout snapshots cut from a dataset and writes a small JSON report.

Every command is deterministic given its inputs: the only entropy source is
an explicit ``--seed``, and timing information is confined to the run record
(the solution, convergence, prediction and report files are byte-stable).

Solution file format (version 1): one line of JSON holding the structure,
solver config, snapshot times, per-node marginal shapes and a SHA-256
fingerprint of the Gibbs kernels; then, for each constrained node in
canonical order, the support points (column-major float64), the weights and
the scaling vector.  Kernels are *not* stored -- they are cheap to recompute
from the embedded marginals and the config, and the fingerprint check
catches any numerical drift in that recomputation.

Exit codes: 0 success; 2 malformed input; 3 solver ran out of iterations
(artifacts are still written); 4 internal invariant violation.

``MSB_THREADS`` caps both the BLAS thread pools and the validation fan-out.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .core import (
    Axis,
    GraphStructure,
    KernelSet,
    Marginal,
    ScalingFamily,
    build_kernel_set,
    canonical_variant,
)
from .ingest import FormatError, assemble_problem, load_profiles, snapshot_marginals
from .metrics import DEFAULT_SUPPORT_CAP
from .predict import (
    PredictedDistribution,
    interpolate,
    prediction_error,
    read_prediction_csv,
    write_prediction_csv,
)
from .sinkhorn import (
    BridgeSolution,
    SolverConfig,
    feasibility_residuals,
    solve,
    write_convergence_csv,
)
from .synth import generate, load_spec, write_dataset

SOLUTION_FORMAT = "msbridge-solution"
SOLUTION_VERSION = 1

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_INTERNAL = 4


def _thread_cap() -> int | None:
    raw = os.environ.get("MSB_THREADS")
    if raw is None:
        return None
    cap = int(raw)
    if cap < 1:
        raise ValueError(f"MSB_THREADS must be >= 1, got {raw!r}")
    return cap


@dataclasses.dataclass
class RunRecord:
    """Everything about one solve worth keeping next to the artifacts."""

    command: str
    structure: dict
    config: dict
    times: list[float]
    n_marginals: int
    iterations: int
    converged: bool
    wall_time_s: float
    feasibility: dict[str, float]
    outputs: dict[str, str]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunRecord":
        return cls(**raw)

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")


def kernel_fingerprint(kernels: KernelSet) -> str:
    digest = hashlib.sha256()
    for key in sorted(kernels.kernels, key=repr):
        digest.update(repr(key).encode())
        digest.update(kernels.kernels[key].tobytes())
    digest.update(repr(float(kernels.cost_normalizer)).encode())
    return digest.hexdigest()


def _structure_to_dict(structure: GraphStructure) -> dict:
    return {"variant": structure.variant, "s": structure.s,
            "J": structure.J, "n0": structure.n0}


def _structure_from_dict(raw: dict) -> GraphStructure:
    return GraphStructure(raw["variant"], s=raw["s"], J=raw["J"], n0=raw["n0"])


def write_solution(solution: BridgeSolution, times, path) -> None:
    """Serialize scalings + marginals; kernels are fingerprinted, not stored."""
    structure = solution.structure
    keys = list(structure.index_set())
    header = {
        "format": SOLUTION_FORMAT,
        "version": SOLUTION_VERSION,
        "structure": _structure_to_dict(structure),
        "config": {
            "epsilon": solution.config.epsilon,
            "tolerance": solution.config.tolerance,
            "max_iterations": solution.config.max_iterations,
            "normalize_costs": solution.config.normalize_costs,
        },
        "times": [float(t) for t in times],
        "iterations": solution.iterations,
        "converged": solution.converged,
        "kernel_sha256": kernel_fingerprint(solution.kernels),
        "marginals": [
            {"key": list(key), "n": solution.marginals[key].n,
             "d": solution.marginals[key].dim,
             "time": solution.marginals[key].time}
            for key in keys
        ],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for key in keys:
            marginal = solution.marginals[key]
            fh.write(np.ascontiguousarray(marginal.points.T).tobytes())
            fh.write(marginal.weights.tobytes())
            fh.write(solution.scalings.u[key].tobytes())


def read_solution(path) -> tuple[BridgeSolution, np.ndarray]:
    """Inverse of :func:`write_solution`; returns (solution, snapshot times)."""
    with open(path, "rb") as fh:
        first = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(first.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError(f"{path}: not a solution file") from None
    if header.get("format") != SOLUTION_FORMAT:
        raise FormatError(f"{path}: not a solution file")
    if header.get("version") != SOLUTION_VERSION:
        raise FormatError(
            f"{path}: unsupported solution version {header.get('version')!r}")

    structure = _structure_from_dict(header["structure"])
    config = SolverConfig(**header["config"])
    marginals: dict[Axis, Marginal] = {}
    scaling_vectors: dict[Axis, np.ndarray] = {}
    offset = 0

    def take(count: int) -> np.ndarray:
        nonlocal offset
        out = np.frombuffer(blob, dtype=np.float64, count=count, offset=offset)
        if out.size != count:
            raise FormatError(f"{path}: truncated data block")
        offset += count * 8
        return out

    for entry in header["marginals"]:
        key = tuple(entry["key"])
        n, d = entry["n"], entry["d"]
        points = take(n * d).reshape(n, d, order="F")
        weights = take(n)
        marginals[key] = Marginal(points, weights, label=key,
                                  time=entry["time"])
        scaling_vectors[key] = take(n).copy()
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")

    kernels = build_kernel_set(structure, marginals, config.epsilon,
                               normalize_costs=config.normalize_costs)
    if kernel_fingerprint(kernels) != header["kernel_sha256"]:
        raise FormatError(
            f"{path}: kernel fingerprint mismatch; the file was written "
            "under a different numerical environment")
    solution = BridgeSolution(
        structure=structure, kernels=kernels,
        scalings=ScalingFamily(structure, scaling_vectors),
        marginals=marginals, convergence_log=(),
        iterations=header["iterations"], converged=header["converged"],
        wall_time=0.0, config=config)
    return solution, np.asarray(header["times"], dtype=np.float64)


def cmd_synth(args) -> int:
    spec = load_spec(args.spec)
    manifest = write_dataset(generate(spec), args.out_dir)
    print(manifest)
    return EXIT_OK


def cmd_solve(args) -> int:
    dataset = load_profiles(args.manifest)
    structure, marginals = assemble_problem(
        dataset, args.structure, args.times, n0=args.n0, seed=args.seed,
        strict=args.strict, normalize=not args.raw_features)
    config = SolverConfig(epsilon=args.epsilon, tolerance=args.tol,
                          max_iterations=args.max_iter)
    solution = solve(structure, marginals, config)

    out = Path(args.out)
    convergence_path = out.parent / (out.stem + ".convergence.csv")
    record_path = out.parent / (out.stem + ".record.json")
    write_solution(solution, args.times, out)
    write_convergence_csv(solution, convergence_path)
    residuals = feasibility_residuals(solution)
    record = RunRecord(
        command="solve",
        structure=_structure_to_dict(structure),
        config={"epsilon": args.epsilon, "tolerance": args.tol,
                "max_iterations": args.max_iter, "seed": args.seed,
                "strict": args.strict, "normalize": not args.raw_features,
                "manifest": str(args.manifest)},
        times=[float(t) for t in args.times],
        n_marginals=len(marginals),
        iterations=solution.iterations,
        converged=solution.converged,
        wall_time_s=solution.wall_time,
        feasibility={f"{j},{sigma}": float(r)
                     for (j, sigma), r in sorted(residuals.items())},
        outputs={"solution": str(out), "convergence": str(convergence_path),
                 "record": str(record_path)},
    )
    record.save(record_path)

    status = "converged" if solution.converged else "NOT converged"
    print(f"{structure.variant}: {len(marginals)} marginals, "
          f"{solution.iterations} sweeps, {status} "
          f"(max residual {max(residuals.values()):.3e})")
    print(f"wrote {out}, {convergence_path}, {record_path}")
    return EXIT_OK if solution.converged else EXIT_NOT_CONVERGED


def cmd_predict(args) -> int:
    solution, times = read_solution(args.solution)
    prediction = interpolate(solution, args.core, args.tau, times)
    if args.max_points is not None and prediction.n > args.max_points:
        small = prediction.consolidated(args.max_points)
        prediction = PredictedDistribution(
            small.points, small.weights, prediction.query_time,
            prediction.core, prediction.bracketing)
    write_prediction_csv(prediction, args.out)
    print(f"wrote {args.out} ({prediction.n} support points)")
    return EXIT_OK


def _validate_one(path: str, dataset, support_cap: int,
                  normalize: bool) -> dict:
    prediction = read_prediction_csv(path)
    holdout = snapshot_marginals(
        dataset, [prediction.query_time], cores=[prediction.core],
        normalize=normalize)[(prediction.core, 1)]
    w2 = prediction_error(prediction, holdout, support_cap=support_cap)
    return {
        "prediction": str(path),
        "core": prediction.core,
        "tau": prediction.query_time,
        "w2": w2,
        "n_predicted": prediction.n,
        "n_holdout": holdout.n,
    }


def cmd_validate(args) -> int:
    dataset = load_profiles(args.manifest)
    cap = _thread_cap() or os.cpu_count() or 1
    workers = max(1, min(cap, len(args.predictions)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(
            lambda p: _validate_one(p, dataset, args.support_cap,
                                    not args.raw_features),
            args.predictions))
    report = {"results": results,
              "median_w2": float(np.median([r["w2"] for r in results]))}
    Path(args.out).write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for r in results:
        print(f"{r['prediction']}: W2 = {r['w2']:.6e}")
    print(f"median W2 = {report['median_w2']:.6e} -> {args.out}")
    return EXIT_OK


def _times_arg(raw: str) -> list[float]:
    try:
        return [float(tok) for tok in raw.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated floats, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msbridge",
        description="Structured multimarginal entropic bridges over "
                    "counter-profile snapshots.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic profile dataset")
    p.add_argument("spec", help="generator spec (JSON)")
    p.add_argument("out_dir", help="output directory for CSVs + manifest")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve", help="fit the coupling to snapshot marginals")
    p.add_argument("manifest", help="dataset manifest (or its directory)")
    p.add_argument("out", help="output solution file")
    p.add_argument("--structure", required=True,
                   choices=("path", "bc", "barycentric", "sp", "series_parallel"),
                   type=canonical_variant)
    p.add_argument("--times", required=True, type=_times_arg,
                   help="comma-separated snapshot times (seconds)")
    p.add_argument("--epsilon", required=True, type=float,
                   help="entropic regularization strength")
    p.add_argument("--tol", type=float, default=1e-10,
                   help="Hilbert-metric stopping tolerance")
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--n0", type=int, default=None,
                   help="barycenter support size (barycentric only)")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for barycenter support clustering")
    p.add_argument("--strict", action="store_true",
                   help="abort when any run is shorter than max(times)")
    p.add_argument("--raw-features", action="store_true",
                   help="skip global per-feature min-max normalization")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("predict", help="interpolate a stored solution")
    p.add_argument("solution", help="solution file from `msbridge solve`")
    p.add_argument("out", help="output prediction CSV")
    p.add_argument("--core", required=True, type=int)
    p.add_argument("--tau", required=True, type=float,
                   help="query time within [times[0], times[-1]]")
    p.add_argument("--max-points", type=int, default=None,
                   help="consolidate the predicted support to this size")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("validate",
                       help="score prediction CSVs against holdout snapshots")
    p.add_argument("manifest", help="dataset to cut holdout marginals from")
    p.add_argument("out", help="output report JSON")
    p.add_argument("--predictions", required=True, nargs="+",
                   help="prediction CSVs from `msbridge predict`")
    p.add_argument("--support-cap", type=int, default=DEFAULT_SUPPORT_CAP,
                   help="consolidate larger supports before the exact LP")
    p.add_argument("--raw-features", action="store_true",
                   help="match a solve that used --raw-features")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with threadpool_limits(limits=_thread_cap()):
            return args.func(args)
    except (FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ArithmeticError, AssertionError) as exc:
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
