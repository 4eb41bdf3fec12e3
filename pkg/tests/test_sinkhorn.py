"""Solver behaviour: feasibility, classical reduction, determinism, objective."""

import numpy as np
import pytest

from conftest import bc_problem, classical_sinkhorn, path_problem, sp_problem
from msbridge.core import (
    PATH,
    GraphStructure,
    Marginal,
    edge_costs,
)
from msbridge.oracle import (
    DenseTensor,
    apply_scalings,
    assemble_cost_tensor,
    assemble_kernel_tensor,
    brute_objective,
)
from msbridge.sinkhorn import (
    SolverConfig,
    converge_metrics,
    evaluate_objective,
    feasibility_residuals,
    solve,
    write_convergence_csv,
)


def _zero_cost_problem(n1=3, n2=4, uniform=False, rng=None):
    """Both marginals supported on the origin, so every cost entry is zero."""
    structure = GraphStructure(PATH, s=2)
    marginals = {}
    for key, n in (((1, 1), n1), ((1, 2), n2)):
        if uniform:
            w = np.full(n, 1.0 / n)
        else:
            w = rng.uniform(0.5, 1.5, size=n)
            w = w / w.sum()
        marginals[key] = Marginal(np.zeros((n, 2)), w, label=key)
    return structure, marginals


class TestSolveBasics:
    def test_zero_cost_gives_product_coupling(self):
        rng = np.random.default_rng(0)
        structure, marginals = _zero_cost_problem(rng=rng)
        sol = solve(structure, marginals, SolverConfig(epsilon=0.7, tolerance=1e-13))
        assert sol.converged
        coupling = sol.workspace().project_pair((1, 1), (1, 2))
        expected = np.outer(marginals[(1, 1)].weights, marginals[(1, 2)].weights)
        np.testing.assert_allclose(coupling / coupling.sum(), expected, atol=1e-13)

    def test_zero_cost_converges_within_two_sweeps(self):
        rng = np.random.default_rng(1)
        structure, marginals = _zero_cost_problem(rng=rng)
        sol = solve(structure, marginals, SolverConfig(epsilon=1.0, tolerance=1e-14))
        assert sol.converged
        assert sol.iterations <= 2
        assert sol.convergence_log[-1] <= 1e-14

    @pytest.mark.parametrize("seed", range(6))
    def test_two_snapshot_path_matches_classical_sinkhorn(self, seed):
        rng = np.random.default_rng(700 + seed)
        structure, marginals = path_problem(rng, max_s=2, max_n=5)
        config = SolverConfig(epsilon=0.3, tolerance=1e-15, max_iterations=20000)
        sol = solve(structure, marginals, config)
        assert sol.converged
        reference = classical_sinkhorn(sol.kernels.kernels[("chain", 1)],
                                       marginals[(1, 1)].weights,
                                       marginals[(1, 2)].weights)
        coupling = sol.workspace().project_pair((1, 1), (1, 2))
        assert np.max(np.abs(coupling - reference)) <= 1e-12

    @pytest.mark.parametrize("builder,seed", [(path_problem, 0),
                                              (bc_problem, 1),
                                              (sp_problem, 2)])
    def test_feasibility_at_tight_tolerance(self, builder, seed):
        rng = np.random.default_rng(710 + seed)
        structure, marginals = builder(rng)
        sol = solve(structure, marginals,
                    SolverConfig(epsilon=0.2, tolerance=1e-10, max_iterations=5000))
        assert sol.converged
        assert sol.convergence_log[-1] <= 1e-10
        residuals = feasibility_residuals(sol)
        assert max(residuals.values()) <= 1e-8

    def test_convergence_log_trends_down(self):
        rng = np.random.default_rng(720)
        structure, marginals = path_problem(rng, max_s=4, max_n=6)
        sol = solve(structure, marginals,
                    SolverConfig(epsilon=0.15, tolerance=1e-12, max_iterations=5000))
        assert sol.converged
        log = np.asarray(sol.convergence_log)
        assert np.all(log[:-1] > 0.0)
        half = len(log) // 2
        if half >= 1:
            assert np.median(log[half:]) < np.median(log[:half])

    def test_non_convergence_is_reported_not_raised(self):
        rng = np.random.default_rng(721)
        structure, marginals = path_problem(rng, max_s=4, max_n=5)
        sol = solve(structure, marginals,
                    SolverConfig(epsilon=0.05, tolerance=1e-30, max_iterations=3))
        assert not sol.converged
        assert sol.iterations == 3
        assert len(sol.convergence_log) == 3
        for vec in sol.scalings.u.values():
            assert np.all(vec > 0.0)

    def test_bitwise_deterministic(self):
        rng = np.random.default_rng(722)
        structure, marginals = bc_problem(rng)
        config = SolverConfig(epsilon=0.25, tolerance=1e-11, max_iterations=4000)
        a = solve(structure, marginals, config)
        b = solve(structure, marginals, config)
        assert a.convergence_log == b.convergence_log
        for key in structure.index_set():
            assert np.array_equal(a.scalings.u[key], b.scalings.u[key])

    def test_huge_epsilon_decouples_consecutive_pairs(self):
        rng = np.random.default_rng(723)
        structure, marginals = path_problem(rng, max_s=3, max_n=4)
        sol = solve(structure, marginals,
                    SolverConfig(epsilon=1e3, tolerance=1e-12, max_iterations=2000))
        assert sol.converged
        ws = sol.workspace()
        for sig in range(1, structure.s):
            pair = ws.project_pair((1, sig), (1, sig + 1))
            product = np.outer(marginals[(1, sig)].weights,
                               marginals[(1, sig + 1)].weights)
            assert np.abs(pair / pair.sum() - product).sum() <= 1e-4

    def test_custom_sweep_order(self):
        rng = np.random.default_rng(724)
        structure, marginals = path_problem(rng, max_s=3, max_n=4)
        order = tuple(reversed(structure.index_set()))
        sol = solve(structure, marginals,
                    SolverConfig(epsilon=0.4, tolerance=1e-11,
                                 max_iterations=3000, sweep_order=order))
        assert sol.converged
        assert max(feasibility_residuals(sol).values()) <= 1e-8

    def test_bad_sweep_order_rejected(self):
        rng = np.random.default_rng(725)
        structure, marginals = path_problem(rng, max_s=3, max_n=4)
        order = tuple(structure.index_set())[:-1]
        with pytest.raises(ValueError, match="sweep_order"):
            solve(structure, marginals,
                  SolverConfig(epsilon=0.4, sweep_order=order))

    def test_zero_weight_support_rejected(self):
        structure = GraphStructure(PATH, s=2)
        rng = np.random.default_rng(726)
        marginals = {
            (1, 1): Marginal(rng.normal(size=(3, 2)), np.array([0.0, 0.5, 0.5])),
            (1, 2): Marginal(rng.normal(size=(3, 2)), np.full(3, 1 / 3)),
        }
        with pytest.raises(ValueError, match="zero-weight"):
            solve(structure, marginals, SolverConfig(epsilon=0.5))

    def test_missing_marginal_rejected(self):
        rng = np.random.default_rng(727)
        structure, marginals = path_problem(rng, max_s=3, max_n=4)
        marginals.pop(structure.index_set()[-1])
        with pytest.raises(ValueError, match="missing"):
            solve(structure, marginals, SolverConfig(epsilon=0.5))

    def test_config_validation(self):
        with pytest.raises(ValueError, match="epsilon"):
            SolverConfig(epsilon=0.0)
        with pytest.raises(ValueError, match="tolerance"):
            SolverConfig(epsilon=1.0, tolerance=-1.0)
        with pytest.raises(ValueError, match="max_iterations"):
            SolverConfig(epsilon=1.0, max_iterations=0)

    def test_one_extra_sweep_stays_within_tolerance(self):
        rng = np.random.default_rng(728)
        structure, marginals = path_problem(rng, max_s=4, max_n=5)
        tol = 1e-11
        sol = solve(structure, marginals,
                    SolverConfig(epsilon=0.3, tolerance=tol, max_iterations=5000))
        assert sol.converged
        from msbridge.core import hilbert_metric
        ws = sol.workspace()
        worst = 0.0
        for key in structure.index_set():
            proj = ws.project(key)
            u_new = ws.scaling(key) * (sol.marginals[key].weights / proj)
            worst = max(worst, hilbert_metric(u_new, ws.scaling(key)))
            ws.set_scaling(key, u_new)
        assert worst <= tol * (1.0 + 1e-9)


class TestObjective:
    def test_uniform_zero_cost_value(self):
        structure, marginals = _zero_cost_problem(n1=3, n2=3, uniform=True)
        sol = solve(structure, marginals, SolverConfig(epsilon=0.8, tolerance=1e-13))
        report = evaluate_objective(sol)
        assert report.mass == pytest.approx(1.0, abs=1e-12)
        assert report.value == pytest.approx(0.8 * np.log(1.0 / 9.0), abs=1e-12)

    def test_no_worse_than_independence_coupling(self):
        rng = np.random.default_rng(730)
        structure, marginals = path_problem(rng, max_s=2, max_n=4)
        sol = solve(structure, marginals,
                    SolverConfig(epsilon=0.5, tolerance=1e-13, max_iterations=5000))
        assert sol.converged
        report = evaluate_objective(sol)
        w1 = marginals[(1, 1)].weights
        w2 = marginals[(1, 2)].weights
        independent = DenseTensor(structure, tuple(structure.index_set()),
                                  np.outer(w1, w2))
        costs = edge_costs(structure, marginals)
        costs = {e: c / sol.kernels.cost_normalizer for e, c in costs.items()}
        cost_tensor = assemble_cost_tensor(structure, costs)
        baseline = brute_objective(independent, cost_tensor, sol.epsilon)
        assert report.value <= baseline + 1e-10

    def test_iterates_approach_optimum_through_dense_oracle(self):
        # Each scaling update is an exact single-constraint I-projection, so
        # the generalized KL from the converged coupling to the iterate is
        # non-increasing; the objective of feasibility-projected iterates
        # closes in on the converged value (its sign of approach varies by
        # instance, the gap does not).
        rng = np.random.default_rng(731)
        structure, marginals = path_problem(rng, max_s=3, max_n=3)
        eps = 0.2
        final = solve(structure, marginals,
                      SolverConfig(epsilon=eps, tolerance=1e-14,
                                   max_iterations=100000))
        assert final.converged
        kt = assemble_kernel_tensor(final.kernels)
        m_star = apply_scalings(kt, final.scalings).values
        axis_of = structure.axis_order()
        costs = edge_costs(structure, marginals)
        costs = {e: c / final.kernels.cost_normalizer for e, c in costs.items()}
        cost_tensor = assemble_cost_tensor(structure, costs)
        obj_star = brute_objective(
            DenseTensor(structure, tuple(structure.index_set()), m_star),
            cost_tensor, eps)
        kl_to_limit, gaps = [], []
        for k in (1, 2, 4, 8, 16, 32):
            sol = solve(structure, marginals,
                        SolverConfig(epsilon=eps, tolerance=1e-300,
                                     max_iterations=k))
            m = apply_scalings(kt, sol.scalings).values
            kl_to_limit.append(float((m_star * np.log(m_star / m)).sum()
                                     - m_star.sum() + m.sum()))
            projected = m.copy()
            for key in structure.index_set():
                ax = axis_of[key]
                marg = projected.sum(
                    axis=tuple(a for a in range(projected.ndim) if a != ax))
                shape = [1] * projected.ndim
                shape[ax] = marg.size
                projected = projected * (marginals[key].weights / marg).reshape(shape)
            dense = DenseTensor(structure, tuple(structure.index_set()), projected)
            gaps.append(abs(brute_objective(dense, cost_tensor, eps) - obj_star))
        assert np.all(np.diff(kl_to_limit) <= 1e-14)
        assert gaps[-1] <= 1e-9
        assert gaps[-1] < gaps[0]

    def test_size_cap_respected(self):
        rng = np.random.default_rng(732)
        structure, marginals = path_problem(rng, max_s=4, max_n=4)
        sol = solve(structure, marginals, SolverConfig(epsilon=0.5, max_iterations=5))
        with pytest.raises(ValueError, match="cap"):
            evaluate_objective(sol, size_cap=1)


class TestConvergeMetrics:
    def test_series_shape_and_final_value(self):
        rng = np.random.default_rng(740)
        structure, marginals = path_problem(rng, max_s=4, max_n=5)
        tol = 1e-11
        sol = solve(structure, marginals,
                    SolverConfig(epsilon=0.3, tolerance=tol, max_iterations=5000))
        series = converge_metrics(sol)
        assert [it for it, _ in series] == list(range(1, sol.iterations + 1))
        assert series[-1][1] <= tol

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(741)
        structure, marginals = path_problem(rng, max_s=3, max_n=4)
        sol = solve(structure, marginals,
                    SolverConfig(epsilon=0.3, tolerance=1e-11, max_iterations=5000))
        out = tmp_path / "convergence.csv"
        write_convergence_csv(sol, out)
        lines = out.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "iteration,d_hilbert"
        assert len(lines) == 1 + sol.iterations
        for line, (it, d) in zip(lines[1:], converge_metrics(sol)):
            sit, sd = line.split(",")
            assert int(sit) == it
            assert float(sd) == d

    def test_csv_bytes_deterministic(self, tmp_path):
        rng = np.random.default_rng(742)
        structure, marginals = path_problem(rng, max_s=3, max_n=4)
        config = SolverConfig(epsilon=0.3, tolerance=1e-11, max_iterations=5000)
        paths = []
        for name in ("a.csv", "b.csv"):
            sol = solve(structure, marginals, config)
            p = tmp_path / name
            write_convergence_csv(sol, p)
            paths.append(p.read_bytes())
        assert paths[0] == paths[1]
