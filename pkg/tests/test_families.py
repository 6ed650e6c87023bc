import hashlib

import numpy as np
import pytest

from transfer_bo._linalg import InputError
from transfer_bo.families import (
    HARTMANN3_A,
    HARTMANN3_P,
    HARTMANN6_A,
    HARTMANN6_P,
    Family,
    FamilyTask,
    alpine_benchmark_shifts,
    evaluate,
    evaluate_many,
    generate_source_data,
    original_task,
    sample_task,
    target_task,
    true_minimum,
)


class TestEvaluate:
    def test_alpine_zero_is_zero_for_any_shift(self):
        for s in np.linspace(-2, 2, 9):
            assert evaluate(FamilyTask(Family.ALPINE, [s]), [0.0]) == pytest.approx(0.0)

    def test_forrester_origin_value(self):
        task = FamilyTask(Family.FORRESTER, [1.0, 0.0, 0.0])
        assert evaluate(task, [0.0]) == pytest.approx(4.0 * np.sin(-4.0), abs=1e-12)

    @pytest.mark.parametrize("family", [Family.HARTMANN3, Family.HARTMANN6])
    def test_hartmann_negative_in_box(self, family, rng):
        task = original_task(family)
        X = rng.uniform(0, 1, (200, task.input_dim))
        assert np.all(evaluate_many(task, X) < 0)

    def test_branin_uses_squared_inner_term(self):
        # with the square, f(0, r/1) at a=1,c=0 collapses to the cosine part
        task = FamilyTask(Family.BRANIN, [1.0, 0.1, 0.0, 6.0, 10.0, 0.05])
        val = evaluate(task, [0.0, 6.0])
        assert val == pytest.approx(10.0 * 0.95 + 10.0, abs=1e-12)
        # and grows quadratically away from the parabola
        assert evaluate(task, [0.0, 8.0]) - val == pytest.approx(4.0, abs=1e-12)

    def test_out_of_box_rejected(self):
        with pytest.raises(InputError):
            evaluate(original_task(Family.FORRESTER), [1.5])

    def test_wrong_dimension_rejected(self):
        with pytest.raises(InputError):
            evaluate(original_task(Family.BRANIN), [0.0])


class TestSampleTask:
    def test_forrester_ranges_and_coverage(self):
        rng = np.random.default_rng(0)
        draws = np.array(
            [sample_task(Family.FORRESTER, rng).params for _ in range(10_000)]
        )
        a = draws[:, 0]
        assert a.min() >= 0.2 and a.max() <= 3.0
        assert (a.max() - a.min()) >= 0.95 * (3.0 - 0.2)
        b = draws[:, 1]
        assert b.min() >= -5.0 and b.max() <= 15.0

    def test_fixed_seed_reproducible(self):
        t1 = sample_task(Family.BRANIN, 42)
        t2 = sample_task(Family.BRANIN, 42)
        assert np.array_equal(t1.params, t2.params)

    def test_alpine_fixed_benchmark_shifts(self):
        shifts = alpine_benchmark_shifts()
        assert shifts == pytest.approx([k * np.pi / 12 for k in range(1, 6)])
        assert np.array_equal(target_task(Family.ALPINE, 0).params, [0.0])
        drawn = {float(sample_task(Family.ALPINE, seed).params[0]) for seed in range(64)}
        assert all(any(abs(d - s) < 1e-12 for s in shifts) for d in drawn)
        assert len(drawn) == len(shifts)

    def test_hartmann_alpha_ranges(self):
        rng = np.random.default_rng(3)
        draws = np.array(
            [sample_task(Family.HARTMANN6, rng).params for _ in range(2000)]
        )
        lows = [1.00, 1.18, 2.8, 3.2]
        highs = [1.02, 1.20, 3.0, 3.4]
        assert np.all(draws >= np.asarray(lows) - 1e-12)
        assert np.all(draws <= np.asarray(highs) + 1e-12)


class TestGenerateSourceData:
    def test_zero_points(self):
        d = generate_source_data(original_task(Family.ALPINE), 0, 0.1, 0)
        assert d.n_points == 0

    def test_noiseless_matches_exact(self):
        task = original_task(Family.BRANIN)
        d = generate_source_data(task, 25, 0.0, 7)
        assert np.allclose(d.observations, evaluate_many(task, d.inputs))

    def test_noise_standard_deviation(self):
        task = original_task(Family.FORRESTER)
        d = generate_source_data(task, 10_000, 0.5, 11)
        resid = d.observations - evaluate_many(task, d.inputs)
        assert abs(np.std(resid) - 0.5) < 0.025

    def test_negative_args_rejected(self):
        with pytest.raises(InputError):
            generate_source_data(original_task(Family.ALPINE), -1, 0.1, 0)
        with pytest.raises(InputError):
            generate_source_data(original_task(Family.ALPINE), 1, -0.1, 0)


class TestHartmannConstants:
    def test_matrices_match_reference_checksums(self):
        # frozen digests of the matrix bytes guard against silent edits
        def digest(arr):
            return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]

        assert digest(HARTMANN3_A) == digest(
            np.array(
                [
                    [3.0, 10.0, 30.0],
                    [0.1, 10.0, 35.0],
                    [3.0, 10.0, 30.0],
                    [0.1, 10.0, 35.0],
                ]
            )
        )
        assert digest(HARTMANN3_P) == digest(
            1e-4
            * np.array(
                [
                    [3689.0, 1170.0, 2673.0],
                    [4699.0, 4387.0, 7470.0],
                    [1091.0, 8732.0, 5547.0],
                    [381.0, 5743.0, 8828.0],
                ]
            )
        )
        assert digest(HARTMANN6_A) == digest(
            np.array(
                [
                    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
                    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
                    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
                    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
                ]
            )
        )
        assert digest(HARTMANN6_P) == digest(
            1e-4
            * np.array(
                [
                    [1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
                    [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
                    [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
                    [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0],
                ]
            )
        )


class TestTrueMinimum:
    def test_alpine_dense_grid(self):
        task = original_task(Family.ALPINE)
        x_min, f_min = true_minimum(task)
        grid = np.linspace(-10, 10, 200_001)[:, None]
        vals = evaluate_many(task, grid)
        assert f_min <= vals.min() + 1e-9
        assert abs(f_min - vals.min()) < 1e-6

    def test_branin_canonical_value(self):
        _, f_min = true_minimum(original_task(Family.BRANIN))
        assert f_min == pytest.approx(0.397887, abs=1e-4)

    def test_constant_function(self):
        task = FamilyTask(Family.FORRESTER, [0.0, 0.0, 5.0])
        _, f_min = true_minimum(task)
        assert f_min == pytest.approx(-5.0, abs=1e-12)

    @pytest.mark.parametrize(
        "family", [Family.FORRESTER, Family.ALPINE, Family.BRANIN, Family.HARTMANN6]
    )
    def test_minimizer_validity_random_probes(self, family):
        rng = np.random.default_rng(5)
        task = sample_task(family, rng)
        _, f_min = true_minimum(task)
        bounds = task.bounds
        X = rng.uniform(bounds[:, 0], bounds[:, 1], (10_000, task.input_dim))
        assert f_min <= evaluate_many(task, X).min() + 1e-9

    def test_budget_guard(self):
        with pytest.raises(InputError):
            true_minimum(original_task(Family.HARTMANN3), grid_density=10_000)

    def test_cached(self):
        task = original_task(Family.ALPINE)
        a = true_minimum(task)
        b = true_minimum(task)
        assert a[1] == b[1]

    def test_reproducibility_of_tasks_and_data(self):
        t1 = sample_task(Family.HARTMANN3, 9)
        t2 = sample_task(Family.HARTMANN3, 9)
        d1 = generate_source_data(t1, 13, 0.2, 21)
        d2 = generate_source_data(t2, 13, 0.2, 21)
        assert np.array_equal(d1.inputs, d2.inputs)
        assert np.array_equal(d1.observations, d2.observations)
