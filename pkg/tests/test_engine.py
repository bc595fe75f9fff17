import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import gaussian
from graphsvgd.engine import (
    EngineConfig,
    NonFiniteError,
    OptimizerState,
    adagrad_step,
    blanket_access_audit,
    graphical_direction,
    initial_particles,
    langevin_step,
    plain_step,
    run,
    svgd_direction_vanilla,
)
from graphsvgd.kernel import CoordinateKernel, KernelSpec, coordinate_kernels
from graphsvgd.model import CliquePotential, GraphicalModel, build_gaussian_mrf, grid_graph


def two_particle_oracle():
    # p = N(0, 1), particles -1 and 1, h = 1.  For the particle at +1:
    # self term: s(1) k(1, 1) = -1, self repulsion 0;
    # partner at -1: s(-1) k(-1, 1) = e^-4, d/dx k(x, 1)|_{x=-1} = -2(-1 - 1) e^-4 = 4 e^-4.
    return 0.5 * (-1.0 + math.exp(-4) + 4 * math.exp(-4))


class TestVanillaDirection:
    def test_single_particle_is_score(self, chain3, rng):
        x = rng.standard_normal((1, 3))
        np.testing.assert_allclose(svgd_direction_vanilla(x, chain3, 1.0), chain3.score(x), atol=1e-15)

    def test_two_particle_oracle(self, std_normal_1d):
        phi = svgd_direction_vanilla(np.array([[-1.0], [1.0]]), std_normal_1d, 1.0)
        assert two_particle_oracle() == pytest.approx(-0.454210, abs=1e-6)
        assert phi[1, 0] == pytest.approx(two_particle_oracle(), abs=1e-12)
        assert phi[0, 0] == pytest.approx(-two_particle_oracle(), abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_reflection_antisymmetry(self, seed):
        rng = np.random.default_rng(seed)
        model = gaussian(np.diag([1.0, 2.0]))
        x = rng.standard_normal((6, 2))
        np.testing.assert_allclose(svgd_direction_vanilla(-x, model), -svgd_direction_vanilla(x, model),
                                   atol=1e-12)

    def test_brute_force_sum(self, chain3, rng):
        x = rng.standard_normal((4, 3))
        h = 0.8
        s = chain3.score(x)
        expected = np.zeros_like(x)
        for m in range(4):
            for l in range(4):
                k = math.exp(-np.sum((x[l] - x[m]) ** 2) / h)
                expected[m] += s[l] * k - 2 / h * (x[l] - x[m]) * k
        np.testing.assert_allclose(svgd_direction_vanilla(x, chain3, h), expected / 4, atol=1e-13)

    def test_nonfinite_score(self):
        pot = CliquePotential((0,), lambda xs: -np.log(xs[..., 0]), lambda xs: -1.0 / xs)
        with pytest.raises(NonFiniteError):
            svgd_direction_vanilla(np.array([[0.0], [1.0]]), GraphicalModel(1, [pot]), 1.0)


class TestGraphicalDirection:
    def test_single_particle(self, chain3, rng):
        x = rng.standard_normal((1, 3))
        kernels = coordinate_kernels(KernelSpec("local"), chain3, x)
        np.testing.assert_allclose(graphical_direction(x, chain3, kernels), chain3.score(x), atol=1e-15)

    def test_factorized_two_particles(self):
        model = gaussian(np.eye(3))
        x = np.array([[-1.0] * 3, [1.0] * 3])
        kernels = [CoordinateKernel((i,), 1.0) for i in range(3)]
        phi = graphical_direction(x, model, kernels)
        np.testing.assert_allclose(phi[1], two_particle_oracle(), atol=1e-12)
        np.testing.assert_allclose(phi[0], -two_particle_oracle(), atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_global_reduces_to_vanilla(self, seed):
        rng = np.random.default_rng(seed)
        d, n = rng.integers(1, 11), rng.integers(1, 21)
        edges = [(i, j) for i in range(d) for j in range(i + 1, d) if rng.random() < 0.3]
        model, _ = build_gaussian_mrf(edges, d, rng)
        x = rng.standard_normal((n, d))
        kernels = coordinate_kernels(KernelSpec("global"), model, x)
        np.testing.assert_allclose(graphical_direction(x, model, kernels),
                                   svgd_direction_vanilla(x, model), atol=1e-12, rtol=0)

    def test_brute_force_local(self, chain3, rng):
        x = rng.standard_normal((5, 3))
        kernels = coordinate_kernels(KernelSpec("local"), chain3, x)
        s = chain3.score(x)
        expected = np.zeros_like(x)
        for i, ker in enumerate(kernels):
            dom = list(ker.domain)
            for m in range(5):
                for l in range(5):
                    k = math.exp(-np.sum((x[l, dom] - x[m, dom]) ** 2) / ker.bandwidth)
                    expected[m, i] += s[l, i] * k - 2 / ker.bandwidth * (x[l, i] - x[m, i]) * k
        np.testing.assert_allclose(graphical_direction(x, chain3, kernels), expected / 5, atol=1e-13)


class TestSteps:
    def test_adagrad_first_step_is_sign(self):
        g = np.array([[3.0, -0.5], [1e3, -2e-2]])
        state = OptimizerState.zeros(g.shape, 0.1)
        x, new_state = adagrad_step(np.zeros_like(g), g, state)
        np.testing.assert_allclose(x, 0.1 * np.sign(g), rtol=1e-4)
        np.testing.assert_allclose(new_state.accumulator, g**2)
        assert np.all(state.accumulator == 0)

    def test_adagrad_zero_direction(self, rng):
        x0 = rng.standard_normal((3, 2))
        x, _ = adagrad_step(x0, np.zeros_like(x0), OptimizerState.zeros(x0.shape, 0.1))
        np.testing.assert_array_equal(x, x0)

    def test_adagrad_clip(self):
        x, _ = adagrad_step(np.array([[3.4]]), np.array([[1.0]]), OptimizerState.zeros((1, 1), 0.1),
                            clip_box=(-3, 3))
        assert x[0, 0] == 3.0

    def test_adagrad_accumulates(self):
        state = OptimizerState.zeros((1, 1), 1.0, fudge=0.0)
        x, state = adagrad_step(np.zeros((1, 1)), np.array([[3.0]]), state)
        x, state = adagrad_step(x, np.array([[4.0]]), state)
        assert x[0, 0] == pytest.approx(1.0 + 4.0 / 5.0)

    def test_plain(self):
        assert plain_step(np.ones((1, 1)), np.ones((1, 1)), 0.5)[0, 0] == 1.5

    def test_langevin_zero_step(self, chain3, rng):
        x = rng.standard_normal((4, 3))
        np.testing.assert_array_equal(langevin_step(x, chain3, 0.0, rng), x)

    def test_langevin_formula(self, chain3):
        x = np.random.default_rng(1).standard_normal((4, 3))
        noise = np.random.default_rng(5).standard_normal(x.shape)
        out = langevin_step(x, chain3, 0.04, np.random.default_rng(5))
        np.testing.assert_allclose(out, x + 0.02 * chain3.score(x) + 0.2 * noise, atol=1e-14)

    @pytest.mark.slow
    def test_langevin_stationary_variance(self, std_normal_1d, rng):
        x = rng.standard_normal((500, 1)) * 3
        pooled = []
        for t in range(3000):
            x = langevin_step(x, std_normal_1d, 1e-2, rng)
            if t >= 1000 and t % 100 == 0:
                pooled.append(x.copy())
        assert 0.9 <= np.var(np.concatenate(pooled)) <= 1.1


class TestRun:
    def test_zero_iterations(self, chain3):
        cfg = EngineConfig(iterations=0, n_particles=5)
        res = run(chain3, cfg)
        np.testing.assert_array_equal(res.final, initial_particles(cfg, 3))
        assert [t for t, _ in res.checkpoints] == [0]

    @pytest.mark.parametrize("algorithm", ["vanilla", "graphical"])
    def test_single_particle_gradient_ascent(self, chain3, rng, algorithm):
        x0 = rng.standard_normal((1, 3))
        cfg = EngineConfig(algorithm=algorithm, kernel=KernelSpec("local"), n_particles=1,
                           iterations=1, step=0.05, optimizer="plain")
        res = run(chain3, cfg, initial=x0)
        np.testing.assert_allclose(res.final, x0 + 0.05 * chain3.score(x0), atol=1e-12, rtol=0)

    def test_factorized_equals_independent_runs(self, rng):
        diag = np.array([1.0, 0.5, 2.0])
        model = gaussian(np.diag(diag), [0.3, -1.0, 0.0])
        x0 = rng.standard_normal((7, 3))
        joint = run(model, EngineConfig("graphical", KernelSpec("local"), 7, 40, 0.2), initial=x0)
        for i in range(3):
            marginal = gaussian(np.diag(diag[[i]]), [[0.3, -1.0, 0.0][i]])
            single = run(marginal, EngineConfig("vanilla", KernelSpec("global"), 7, 40, 0.2),
                         initial=x0[:, [i]])
            np.testing.assert_allclose(joint.final[:, i], single.final[:, 0], atol=1e-10)

    @pytest.mark.parametrize("algorithm,variant", [("vanilla", "global"), ("graphical", "local"),
                                                   ("graphical", "random_subset"), ("langevin", "local")])
    def test_deterministic(self, rng, algorithm, variant):
        model, _ = build_gaussian_mrf(grid_graph(3, 3), 9, rng)
        cfg = EngineConfig(algorithm, KernelSpec(variant, subset_size=3), 8, 20, 0.1, seed=42)
        a, b = run(model, cfg), run(model, cfg)
        np.testing.assert_array_equal(a.final, b.final)
        c = run(model, EngineConfig(algorithm, KernelSpec(variant, subset_size=3), 8, 20, 0.1, seed=43))
        assert not np.array_equal(a.final, c.final)

    def test_checkpoints_and_log(self, chain3):
        res = run(chain3, EngineConfig(iterations=10, n_particles=4, checkpoint_every=4))
        assert [t for t, _ in res.checkpoints] == [0, 4, 8, 10]
        np.testing.assert_array_equal(res.checkpoints[-1][1], res.final)
        assert res.log.kernel_variant == "local"
        assert '"iteration": 8' in res.log.to_json()

    def test_supplied_initial_label(self, chain3):
        res = run(chain3, EngineConfig(iterations=1, n_particles=2), initial=np.zeros((2, 3)),
                  init_label="zeros")
        assert res.log.init == "zeros"

    def test_frozen_bandwidth(self, chain3):
        cfg = EngineConfig(kernel=KernelSpec("local", recompute_bandwidth=False), iterations=5,
                           n_particles=6, checkpoint_every=1)
        h = [c["bandwidths"] for c in run(chain3, cfg).log.checkpoints[1:]]
        assert all(b == h[0] for b in h)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_reports_iteration(self):
        pot = CliquePotential((0,), lambda xs: xs[..., 0] ** 4, lambda xs: 4 * xs**3)
        with pytest.raises(NonFiniteError) as info:
            run(GraphicalModel(1, [pot]), EngineConfig("vanilla", iterations=50, n_particles=2,
                                                        step=10.0, optimizer="plain"))
        assert info.value.iteration is not None

    def test_config_validation(self):
        for bad in (dict(algorithm="nuts"), dict(optimizer="adam"), dict(iterations=-1),
                    dict(step=0.0), dict(n_particles=0)):
            with pytest.raises(ValueError):
                EngineConfig(**bad)

    def test_wrong_initial_shape(self, chain3):
        with pytest.raises(ValueError):
            run(chain3, EngineConfig(iterations=1), initial=np.zeros((3, 2)))

    def test_converges_on_gaussian(self, chain3):
        res = run(chain3, EngineConfig("graphical", KernelSpec("local"), 100, 400, 0.2))
        A = np.array([[1.0, 0.4, 0.0], [0.4, 1.2, -0.3], [0.0, -0.3, 0.9]])
        mean = np.linalg.solve(A, [0.2, -0.1, 0.3])
        assert np.max(np.abs(res.final.mean(0) - mean)) < 0.05
        np.testing.assert_allclose(np.cov(res.final.T), np.linalg.inv(A), atol=0.15)


class TestAudit:
    def test_factorized_reads_own_column(self, rng):
        model = gaussian(np.eye(4))
        report = blanket_access_audit(model, EngineConfig(kernel=KernelSpec("local"), n_particles=5))
        assert report.passed and report.reads == [{0}, {1}, {2}, {3}]
        assert report.max_deviation < 1e-12

    def test_grid_local(self, rng):
        model, _ = build_gaussian_mrf(grid_graph(10, 10), 100, rng)
        report = blanket_access_audit(model, EngineConfig(kernel=KernelSpec("local"), n_particles=6))
        assert report.passed and report.blanket_local
        assert max(len(r) for r in report.reads) == 5
        assert "PASS" in report.summary()

    def test_global_reads_everything(self, rng):
        model, _ = build_gaussian_mrf(grid_graph(3, 3), 9, rng)
        report = blanket_access_audit(model, EngineConfig(kernel=KernelSpec("global"), n_particles=6))
        assert all(r == set(range(9)) for r in report.reads)
        assert not report.blanket_local

    def test_random_subset(self, rng):
        model, _ = build_gaussian_mrf(grid_graph(3, 3), 9, rng)
        report = blanket_access_audit(model, EngineConfig(kernel=KernelSpec("random_subset", subset_size=2),
                                                          n_particles=6))
        assert report.passed and report.blanket_local
