import math
from types import SimpleNamespace

import numpy as np
import pytest

from services.bootstrap import WeightScheme, stream_generator, wild_replicates
from services.errors import ExperimentError, InputError
from services.gcm import DATA1_TRUTH, RegressionConfig, fit_residuals, kgcm_coefficients, kgcm_wild_builder
from services.functional import norm_sq
from services.kernels import KernelSpec
from services.mmd import mmd_statistic, mmd_wild_builder
from services.runner import preset_test
from services.simlab import (
    ExperimentResult,
    GeneratorConfig,
    binomial_half_width,
    figure_preset,
    gen_data1,
    gen_data2,
    gen_survival,
    gen_two_sample,
    generate,
    population_mmd_sq,
    power_curves,
    rejection_rate,
)
from services.spectrum import ks_distance

SE1 = KernelSpec(lengthscale_sq=1.0)
MEDIAN = KernelSpec(lengthscale_rule="median-heuristic")

# 99% binomial band around the nominal 5% level at 400 repetitions
LEVEL_BAND = (0.028, 0.078)


def always(reject: bool):
    def test(sample, seed):
        return SimpleNamespace(reject=reject)
    return test


class TestGenerators:
    def test_data1_rejects_bad_gamma(self):
        with pytest.raises(InputError):
            gen_data1(10, 1.5, np.random.default_rng(0))

    def test_data1_is_reproducible(self):
        a = gen_data1(20, 0.5, stream_generator(3, 0, 0))
        b = gen_data1(20, 0.5, stream_generator(3, 0, 0))
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.z, b.z)
        assert a.d == 1

    def test_data1_conditional_means(self):
        s = gen_data1(20000, 0.3, np.random.default_rng(1))
        z = s.z[:, 0]
        assert abs(np.mean(s.x - z)) <= 0.03
        assert abs(np.mean(s.y - z ** 2)) <= 0.03

    def test_data2_needs_two_dimensions(self):
        with pytest.raises(InputError):
            gen_data2(10, 1, np.random.default_rng(0))

    def test_data2_noise_moments(self):
        s = gen_data2(10000, 2, np.random.default_rng(2))
        noise = s.x - s.z[:, 0]
        assert abs(noise.mean()) <= 3 * 0.01
        assert noise.var() == pytest.approx(1.0, abs=0.07)
        assert s.z.shape == (10000, 2)

    def test_data2_residuals_uncorrelated(self):
        s = gen_data2(10000, 2, np.random.default_rng(3))
        eps_x, eps_y = s.x - s.z[:, 0], s.y - s.z[:, 1]
        assert abs(np.corrcoef(eps_x, eps_y)[0, 1]) <= 0.04

    def test_data2_conditional_dependence(self):
        s = gen_data2(10000, 2, np.random.default_rng(4))
        product = (s.x - s.z[:, 0]) * (s.y - s.z[:, 1])
        # E(eps_x eps_y | Z) = (Z_1 + Z_2) / d
        assert np.corrcoef(product, s.z[:, 0] + s.z[:, 1])[0, 1] > 0.1

    def test_two_sample_shift(self):
        s = gen_two_sample(200, 200, 10.0, np.random.default_rng(5))
        assert s.y.mean() - s.x.mean() == pytest.approx(10.0, abs=0.5)
        with pytest.raises(InputError):
            gen_two_sample(0, 5, 0.0, np.random.default_rng(5))

    def test_survival_without_censoring(self):
        s = gen_survival(50, 50, 1.0, 0.0, 0.0, np.random.default_rng(6))
        assert s.n_events == 100

    def test_survival_rates(self):
        with pytest.raises(InputError):
            gen_survival(5, 5, 0.0, 0.1, 0.1, np.random.default_rng(0))
        with pytest.raises(InputError):
            gen_survival(5, 5, 1.0, -0.1, 0.1, np.random.default_rng(0))

    def test_unequal_censoring_changes_observed_times(self):
        s = gen_survival(1000, 1000, 1.0, 0.1, 1.0, np.random.default_rng(7))
        assert ks_distance(s.time[s.group == 0], s.time[s.group == 1]) > 0.1

    def test_population_mmd_closed_form(self):
        # for the exp(-|u-v|^2) kernel and unit-variance normals, E K = exp(-delta^2/5)/sqrt(5)
        oracle = population_mmd_sq(1.0, SE1, 200000, np.random.default_rng(8))
        expected = 2.0 / math.sqrt(5.0) - 2.0 * math.exp(-0.2) / math.sqrt(5.0)
        assert oracle == pytest.approx(expected, abs=0.005)
        assert population_mmd_sq(0.0, SE1, 200000, np.random.default_rng(9)) == pytest.approx(0.0, abs=0.005)

    def test_generator_config(self):
        config = GeneratorConfig(name="two_sample", n=9)
        assert config.group_sizes() == (4, 5)
        assert config.with_param("shift", 2.0).shift == 2.0
        with pytest.raises(InputError):
            config.with_param("colour", 1.0)
        sample = generate(GeneratorConfig(name="data2", d=3, n=12), np.random.default_rng(0))
        assert sample.d == 3

    def test_out_of_range_grid_values(self):
        with pytest.raises(InputError):
            GeneratorConfig(name="data1").with_param("gamma", 2.0)
        with pytest.raises(InputError):
            GeneratorConfig(name="data2").with_param("d", 1)
        with pytest.raises(InputError):
            GeneratorConfig(name="survival").with_param("rate1", 0.0)
        with pytest.raises(InputError):
            GeneratorConfig(name="survival").with_param("cens1", -0.5)
        with pytest.raises(InputError):
            GeneratorConfig(name="two_sample").with_param("n", 0.5)

    def test_bad_grid_fails_before_any_repetition(self):
        calls = []

        def recording(sample, seed):
            calls.append(seed)
            return SimpleNamespace(reject=False)

        with pytest.raises(InputError):
            rejection_rate(recording, GeneratorConfig(name="data1", n=10), [0.5, 2.0], 3, seed=0)
        assert calls == []

    def test_data1_population_gcm_vanishes(self):
        for gamma in (0.5, 1.0):
            s = gen_data1(100000, gamma, np.random.default_rng(12))
            z = s.z[:, 0]
            product = (s.x - z) * (s.y - z ** 2)
            standard_error = product.std() / math.sqrt(product.size)
            assert abs(product.mean()) <= 3 * standard_error


class TestExperiments:
    def test_always_reject_stub(self):
        result = rejection_rate(always(True), GeneratorConfig(name="two_sample", n=10), [0.0, 1.0], 5, seed=0)
        assert result.rates == [1.0, 1.0]
        assert result.ci_half_width == [0.0, 0.0]

    def test_never_reject_stub(self):
        result = rejection_rate(always(False), GeneratorConfig(name="two_sample", n=10), [0.0], 5, seed=0)
        assert result.rates == [0.0]

    def test_rows_are_clipped(self):
        result = ExperimentResult(param_grid=[0.0], rates=[0.02], reps=10, ci_half_width=[0.05])
        row = result.rows()[0]
        assert row["ci_low"] == 0.0
        assert row["ci_high"] == pytest.approx(0.07)
        assert row["reps"] == 10

    def test_binomial_half_width(self):
        assert binomial_half_width(0.5, 100) == pytest.approx(1.959963984540054 * 0.05)

    def test_failures_name_the_repetition(self):
        def failing(sample, seed):
            raise RuntimeError("broken test")

        with pytest.raises(ExperimentError) as exc:
            rejection_rate(failing, GeneratorConfig(name="data1", n=10), [0.5], 3, seed=0)
        assert (exc.value.grid_index, exc.value.repetition, exc.value.param) == (0, 0, 0.5)

    def test_threads_do_not_change_rates(self):
        tests = {"mmd": preset_test("mmd", M=20, kernel=SE1)}
        generator = GeneratorConfig(name="two_sample", n=20)
        serial = power_curves(tests, generator, [0.0, 1.5], 6, seed=11, threads=1)
        parallel = power_curves(tests, generator, [0.0, 1.5], 6, seed=11, threads=3)
        assert serial["mmd"] == parallel["mmd"]

    def test_common_random_numbers(self):
        # a test that reads the data sees the same data whatever tests run beside it
        seen = {}

        def recording(name):
            def test(sample, seed):
                seen.setdefault(name, []).append((float(sample.x[0, 0]), seed))
                return SimpleNamespace(reject=False)
            return test

        power_curves({"a": recording("a"), "b": recording("b")},
                     GeneratorConfig(name="two_sample", n=8), [0.0], 4, seed=2)
        assert seen["a"] == seen["b"]

    def test_figure_presets(self):
        generator, grid, tests = figure_preset("figure1", M=50)
        assert generator.name == "data1"
        assert grid == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert set(tests) == {"gcm", "wgcm", "kgcm1", "kgcm2", "kgcm3"}
        assert tests["kgcm2"].M == 50
        generator, grid, _ = figure_preset("figure2")
        assert (generator.name, grid) == ("data2", [2, 5, 10, 15, 20])
        with pytest.raises(InputError):
            figure_preset("figure3")

    def test_config_echo(self):
        result = rejection_rate(preset_test("mmd", M=10, kernel=SE1), GeneratorConfig(name="two_sample", n=10),
                                [0.0], 2, seed=0)
        assert result.config_echo["generator"]["name"] == "two_sample"
        assert "threads" not in result.config_echo["test"]
        assert result.param_name == "shift"


@pytest.mark.slow
class TestAcceptance:
    def test_kgcm_level_on_data1(self):
        result = rejection_rate(preset_test("kgcm2", M=300), GeneratorConfig(name="data1", n=100),
                                [0.0], 400, seed=101, threads="auto")
        assert LEVEL_BAND[0] <= result.rates[0] <= LEVEL_BAND[1]

    def test_gcm_is_blind_where_kgcm_is_not(self):
        tests = {"gcm": preset_test("gcm", M=300), "kgcm1": preset_test("kgcm1", M=300)}
        results = power_curves(tests, GeneratorConfig(name="data1", n=100), [1.0], 400, seed=102, threads="auto")
        gcm_rate, kgcm_rate = results["gcm"].rates[0], results["kgcm1"].rates[0]
        assert gcm_rate <= 0.12
        assert kgcm_rate >= gcm_rate + 0.25

    def test_power_decays_with_dimension(self):
        result = rejection_rate(preset_test("kgcm3", M=300), GeneratorConfig(name="data2", n=100),
                                [2, 20], 400, seed=103, threads="auto")
        assert result.rates[0] - result.rates[1] >= 0.1

    def test_mmd_level(self):
        result = rejection_rate(preset_test("mmd", M=300, kernel=MEDIAN), GeneratorConfig(name="two_sample", n=100),
                                [0.0], 400, seed=104, threads="auto")
        assert LEVEL_BAND[0] <= result.rates[0] <= LEVEL_BAND[1]

    def test_logrank_level(self):
        generator = GeneratorConfig(name="survival", n=200, cens0=0.25, cens1=0.25)
        result = rejection_rate(preset_test("logrank", M=300, kernel=MEDIAN), generator,
                                [1.0], 400, seed=105, threads="auto")
        assert LEVEL_BAND[0] <= result.rates[0] <= LEVEL_BAND[1]

    def test_logrank_level_under_unequal_censoring(self):
        generator = GeneratorConfig(name="survival", n=200, cens0=0.1, cens1=1.0)
        result = rejection_rate(preset_test("logrank", M=300, kernel=MEDIAN), generator,
                                [1.0], 400, seed=106, threads="auto")
        assert LEVEL_BAND[0] <= result.rates[0] <= LEVEL_BAND[1]

    def test_mmd_bootstrap_matches_null_law(self):
        s = gen_two_sample(100, 100, 0.0, stream_generator(107, 0))
        replicates = wild_replicates(mmd_wild_builder(s), WeightScheme(), s.n, 2000, SE1, seed=1)
        null = [mmd_statistic(gen_two_sample(100, 100, 0.0, stream_generator(107, 1, r)), SE1) for r in range(2000)]
        assert ks_distance(replicates, null) <= 0.08

    def test_kgcm_bootstrap_matches_null_law(self):
        cfg = RegressionConfig()
        s = gen_data1(200, 0.0, stream_generator(108, 0))
        residuals = fit_residuals(s, cfg)
        replicates = wild_replicates(kgcm_wild_builder(residuals, s.z), WeightScheme(), s.n, 2000, SE1, seed=1)
        null = []
        for r in range(2000):
            fresh = gen_data1(200, 0.0, stream_generator(108, 1, r))
            null.append(norm_sq(kgcm_coefficients(fit_residuals(fresh, cfg), fresh.z), SE1))
        assert ks_distance(replicates, null) <= 0.08

    def test_kgcm1_power_grows_with_gamma(self):
        grid = [0.0, 0.25, 0.5, 0.75, 1.0]
        result = rejection_rate(preset_test("kgcm1", M=200), GeneratorConfig(name="data1", n=100),
                                grid, 200, seed=112, threads="auto")
        rates, half = result.rates, result.ci_half_width
        for i in range(len(grid) - 1):
            assert rates[i + 1] >= rates[i] - 2.0 * max(half[i], half[i + 1])

    def test_mmd_converges_to_population_value(self):
        oracle = population_mmd_sq(1.0, SE1, 10 ** 6, np.random.default_rng(109))
        errors = []
        for n, datasets in ((200, 40), (800, 20), (3200, 10)):
            estimates = [
                mmd_statistic(gen_two_sample(n // 2, n // 2, 1.0, stream_generator(110, n, k)), SE1) / n
                for k in range(datasets)
            ]
            errors.append(abs(np.mean(estimates) - oracle))
        # decreasing up to Monte-Carlo slack of 1% of the target
        slack = 0.01 * oracle
        assert errors[1] <= errors[0] + slack
        assert errors[2] <= errors[1] + slack
        assert errors[2] <= 0.1 * oracle

    def test_regression_error_vanishes_faster_than_root_n(self):
        medians = []
        for n in (100, 200, 400, 800):
            scaled = []
            for r in range(200):
                s = gen_data1(n, 0.5, stream_generator(111, n, r))
                residuals = fit_residuals(s, RegressionConfig(), truth=DATA1_TRUTH)
                scaled.append(math.sqrt(n) * residuals.a_f_hat)
            medians.append(float(np.median(scaled)))
        assert all(later < earlier for earlier, later in zip(medians, medians[1:]))
