"""The fourteen acceptance criteria, each at its stated tolerance and time budget.

Every test records a verdict line that the terminal summary prints, so a
full ``pytest`` run ends with one PASS/FAIL line per criterion.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE, gaussian
from graphsvgd.diagnostics import ksd_oracle_check, ksd_squared, rows_to_csv
from graphsvgd.engine import (
    EngineConfig,
    blanket_access_audit,
    graphical_direction,
    run,
    svgd_direction_vanilla,
)
from graphsvgd.experiments import builtin_models, default_config, run_experiment, summarize
from graphsvgd.kernel import CoordinateKernel, KernelSpec, coordinate_kernels
from graphsvgd.model import build_gaussian_mrf, check_gradients, gaussian_exact_sample, GaussianMrfParams


class Verdict:
    def __init__(self):
        self.passed = True
        self.notes = []

    def check(self, condition, note):
        self.passed &= bool(condition)
        self.notes.append(note)


@contextmanager
def criterion(number, budget):
    verdict = Verdict()
    start = time.perf_counter()
    try:
        yield verdict
    except Exception as err:
        verdict.check(False, f"raised {type(err).__name__}: {err}")
    elapsed = time.perf_counter() - start
    verdict.check(elapsed < budget, f"runtime {elapsed:.1f} s")
    ACCEPTANCE[number] = (verdict.passed, "; ".join(verdict.notes[:-1]) or "-", elapsed, budget)
    assert verdict.passed, "; ".join(verdict.notes)


def _means(rows, metric, **match):
    sel = [r for r in rows if all(r[k] == v for k, v in match.items())]
    vals = np.array([r[metric] for r in sel], dtype=float)
    return vals.mean(), vals.std(ddof=1) / math.sqrt(len(vals)), vals


def test_01_single_particle_gradient_ascent():
    with criterion(1, 1.0) as v:
        rng = np.random.default_rng(1)
        models = [m for m in builtin_models(1).values()]
        worst = 0.0
        for model in models:
            x0 = rng.standard_normal((1, model.dim)) * 0.5
            if model.name == "sensor":
                x0 = x0 + 0.1
            for algorithm in ("vanilla", "graphical"):
                cfg = EngineConfig(algorithm, KernelSpec("local"), 1, 1, 0.03, optimizer="plain")
                final = run(model, cfg, initial=x0).final
                worst = max(worst, float(np.max(np.abs(final - (x0 + 0.03 * model.score(x0))))))
        v.check(worst <= 1e-12, f"max deviation {worst:.1e} over {len(models)} models")


def test_02_global_kernels_reduce_to_vanilla():
    with criterion(2, 5.0) as v:
        rng = np.random.default_rng(2)
        worst = 0.0
        for _ in range(20):
            d, n = int(rng.integers(1, 11)), int(rng.integers(1, 21))
            edges = [(i, j) for i in range(d) for j in range(i + 1, d) if rng.random() < 0.4]
            model, _ = build_gaussian_mrf(edges, d, rng)
            x = rng.standard_normal((n, d)) * rng.uniform(0.3, 3.0)
            kernels = coordinate_kernels(KernelSpec("global"), model, x)
            gap = np.max(np.abs(graphical_direction(x, model, kernels) - svgd_direction_vanilla(x, model)))
            worst = max(worst, float(gap))
        v.check(worst <= 1e-12, f"max deviation {worst:.1e} on 20 instances")


def test_03_two_particle_oracle():
    with criterion(3, 1.0) as v:
        expected = 0.5 * (-1.0 + math.exp(-4) + 4 * math.exp(-4))
        model = gaussian(np.eye(1))
        x = np.array([[-1.0], [1.0]])
        vanilla = svgd_direction_vanilla(x, model, 1.0)[:, 0]
        graphical = graphical_direction(x, model, [CoordinateKernel((0,), 1.0)])[:, 0]
        got = np.concatenate([vanilla, graphical])
        want = np.array([-expected, expected] * 2)
        gap = float(np.max(np.abs(got - want)))
        v.check(abs(expected + 0.454210) < 1e-6 and gap < 1e-6,
                f"phi(+1) = {vanilla[1]:.6f}, phi(-1) = {vanilla[0]:.6f}")


def test_04_ksd_null():
    with criterion(4, 30.0) as v:
        model = gaussian(np.eye(1))
        within = {"global": 0, "local": 0}
        for seed in range(20):
            x = np.random.default_rng(seed).standard_normal((2000, 1))
            for variant in within:
                est = ksd_squared(x, model, coordinate_kernels(KernelSpec(variant), model, x), "U")
                within[variant] += abs(est.total) <= 3 * est.stderr
        v.check(min(within.values()) >= 18,
                f"within 3 stderr: global {within['global']}/20, local {within['local']}/20")


def test_05_ksd_oracle_check():
    with criterion(5, 10.0) as v:
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(5):
            d, n = int(rng.integers(1, 4)), int(rng.integers(2, 11))
            model, _ = build_gaussian_mrf([(i, i + 1) for i in range(d - 1)], d, rng)
            x = rng.standard_normal((n, d))
            kernels = coordinate_kernels(KernelSpec("local"), model, x)
            worst = max(worst, ksd_oracle_check(x, model, kernels, "V"),
                        ksd_oracle_check(x, model, kernels, "U"))
        v.check(worst < 1e-4, f"max deviation {worst:.1e}")


CHAIN_A = np.array([[1.0, 0.4, 0.0], [0.4, 1.2, -0.3], [0.0, -0.3, 0.9]])
CHAIN_B = np.array([0.2, -0.1, 0.3])


def test_06_locality_and_conditional_discrimination():
    with criterion(6, 30.0) as v:
        p = gaussian(CHAIN_A, CHAIN_B)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((40, 3))
        base = ksd_squared(x, p, coordinate_kernels(KernelSpec("local"), p, x), "U").per_coordinate
        drift = 0.0
        for i in range(3):
            outside = np.setdiff1d(np.arange(3), p.closed_blankets[i])
            for _ in range(5):
                y = x.copy()
                y[:, outside] += rng.standard_normal((40, len(outside))) * 3
                per = ksd_squared(y, p, coordinate_kernels(KernelSpec("local"), p, y), "U").per_coordinate
                drift = max(drift, abs(per[i] - base[i]))
        v.check(drift <= 1e-10, f"locality drift {drift:.1e}")

        # q = p passes; q with the middle node's conditional variance doubled is flagged.
        # Halving A_11 and the couplings of node 1 keeps its conditional mean and
        # doubles its conditional variance.
        A_q, b_q = CHAIN_A.copy(), CHAIN_B.copy()
        A_q[1, :] /= 2
        A_q[:, 1] /= 2
        A_q[1, 1] = CHAIN_A[1, 1] / 2
        b_q[1] /= 2
        sample_rng = np.random.default_rng(60)
        for label, (A, b) in (("q=p", (CHAIN_A, CHAIN_B)), ("q inflated", (A_q, b_q))):
            x = gaussian_exact_sample(GaussianMrfParams(A, b), 2000, sample_rng)
            est = ksd_squared(x, p, coordinate_kernels(KernelSpec("local"), p, x), "U")
            if label == "q=p":
                v.check(abs(est.total) <= 3 * est.stderr,
                        f"q=p: ksd2 {est.total:.1e} = {est.total / est.stderr:.1f} stderr")
            else:
                z = est.total / est.stderr_projection
                v.check(z > 5, f"inflated q: ksd2 {est.total:.3f} = {z:.0f} stderr")


def test_07_isotropic_variance():
    with criterion(7, 120.0) as v:
        cfg = default_config("iso-gaussian", trials=10, particle_counts=[50], params={"dims": [100]})
        rows = run_experiment(cfg).rows
        g, _, _ = _means(rows, "variance", algorithm="graphical")
        van, _, _ = _means(rows, "variance", algorithm="vanilla")
        v.check(van < g and 0.85 <= g <= 1.10 and van < 0.85,
                f"variance vanilla {van:.3f}, graphical {g:.3f}")


def _pooled_gap(rows, metric, better, worse):
    b, sb, _ = _means(rows, metric, **better)
    w, sw, _ = _means(rows, metric, **worse)
    return b, w, math.sqrt(sb**2 + sw**2)


def test_08_grid():
    with criterion(8, 180.0) as v:
        cfg = default_config("gaussian-grid", trials=10, particle_counts=[50],
                             algorithms=["vanilla", "graphical-local"])
        rows = run_experiment(cfg).rows
        for metric in ("mse_second", "mmd2"):
            g, van, se = _pooled_gap(rows, metric, {"algorithm": "graphical"}, {"algorithm": "vanilla"})
            v.check(van - g >= se, f"{metric} graphical {g:.4f} vs vanilla {van:.4f} (pooled se {se:.4f})")


def test_09_sparsity_trend():
    with criterion(9, 180.0) as v:
        cfg = default_config("sparsity-sweep", trials=10, particle_counts=[20], params={"radii": [1, 14]})
        rows = run_experiment(cfg).rows
        ratio = {}
        for setting in ("r=1", "r=14"):
            van, _, _ = _means(rows, "mmd2", setting=setting, algorithm="vanilla")
            g, _, _ = _means(rows, "mmd2", setting=setting, algorithm="graphical")
            ratio[setting] = van / g
        v.check(ratio["r=1"] > ratio["r=14"],
                f"mmd2 ratio vanilla/graphical r=1 {ratio['r=1']:.2f}, r=14 {ratio['r=14']:.2f}")


def test_10_dense_ordering():
    with criterion(10, 180.0) as v:
        cfg = default_config("gaussian-dense", trials=10, particle_counts=[50],
                             algorithms=["vanilla", "graphical-random", "graphical-combine"])
        rows = run_experiment(cfg).rows
        rnd, cmb, se1 = _pooled_gap(rows, "mse_second", {"kernel_variant": "random_subset"},
                                    {"kernel_variant": "combined"})
        _, van, se2 = _pooled_gap(rows, "mse_second", {"kernel_variant": "combined"},
                                  {"algorithm": "vanilla"})
        v.check(rnd <= cmb + se1 and cmb <= van + se2 and rnd < van,
                f"mse_second random {rnd:.4f} < combine {cmb:.4f} < vanilla {van:.4f}")


def test_11_sensor_bimodality():
    with criterion(11, 120.0) as v:
        cfg = default_config("sensor", trials=10, particle_counts=[50], iterations=500,
                             algorithms=["graphical-local"],
                             params={"layout": "small", "reference_steps": 0})
        splits = [r["split"] for r in run_experiment(cfg).rows]
        hits = sum(s >= 0.2 for s in splits)
        v.check(hits >= 8, f"bimodal in {hits}/10 seeds (splits {', '.join(f'{s:.2f}' for s in splits)})")


def test_12_sensor_rmse():
    with criterion(12, 240.0) as v:
        cfg = default_config("sensor", trials=5, particle_counts=[50],
                             algorithms=["vanilla", "graphical-local"],
                             params={"reference_steps": 0})
        rows = run_experiment(cfg).rows
        g, sg, _ = _means(rows, "rmse", algorithm="graphical")
        van, sv, _ = _means(rows, "rmse", algorithm="vanilla")
        v.check(g <= van, f"rmse graphical {g:.5f} (se {sg:.5f}) vs vanilla {van:.5f} (se {sv:.5f})")


def test_13_determinism_and_audit():
    with criterion(13, 60.0) as v:
        cfg = default_config("gaussian-dense", trials=2, iterations=20, particle_counts=[10],
                             params={"dim": 10, "pool": 300})
        first, second = run_experiment(cfg), run_experiment(cfg)
        same = rows_to_csv(first.rows, first.extra_fields) == rows_to_csv(second.rows, second.extra_fields)
        v.check(same, "byte-identical CSV" if same else "CSV differs between runs")
        failed = [name for name, model in builtin_models(0).items()
                  if not blanket_access_audit(model, EngineConfig(kernel=KernelSpec("local"),
                                                                  n_particles=8)).passed]
        v.check(not failed, f"audit failures: {failed or 'none'}")


def test_14_gradient_checks():
    with criterion(14, 30.0) as v:
        reports = {name: check_gradients(model, trials=10, tol=1e-4)
                   for name, model in builtin_models(0).items()}
        worst = max(r.max_error for r in reports.values())
        v.check(all(r.passed for r in reports.values()),
                f"{len(reports)} models, max error {worst:.1e}")
