"""
Example usage of the kernel test library. Run from src/backend:

    python examples/usage_example.py
"""
import os
import sys

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from services.bootstrap import WeightScheme, stream_generator
from services.gcm import DATA1_TRUTH, fit_residuals
from services.kernels import KernelSpec
from services.mmd import mmd_wild_builder
from services.runner import preset_test, run_test
from services.simlab import GeneratorConfig, gen_data1, gen_survival, gen_two_sample, rejection_rate
from services.spectrum import ks_distance, sample_weighted_chisq, spectrum_from_builder

MEDIAN = KernelSpec(lengthscale_rule="median-heuristic")


def example_two_sample():
    """Example: MMD test on two normal samples whose means differ by 0.5"""

    sample = gen_two_sample(100, 100, 0.5, stream_generator(1, 0))
    report = run_test(preset_test("mmd", M=500, kernel=MEDIAN), sample, seed=7)

    print(f"📊 Statistic: {report.statistic:.4f}  critical value: {report.critical_value:.4f}")
    print(f"📉 p-value: {report.p_value:.4f}")
    print(f"⚖️  Reject at alpha={report.alpha}: {report.reject}")
    print(f"🔧 Median heuristic picked l^2 = {report.kernel['lengthscale_sq']:.4f}")


def example_survival():
    """Example: kernel log-rank test when group 1 dies twice as fast"""

    sample = gen_survival(80, 80, 2.0, 0.3, 0.3, stream_generator(2, 0))
    for km in (False, True):
        config = preset_test("logrank", M=500, kernel=MEDIAN, km_transform=km)
        report = run_test(config, sample, seed=3)
        scale = "Kaplan-Meier scale" if km else "time scale"
        print(f"  {scale:20s} statistic {report.statistic:8.4f}  p-value {report.p_value:.4f}")
    print(f"  {sample.n_events} events out of {sample.n} subjects")


def example_conditional_independence():
    """Example: GCM against the kernelised GCM on data where the GCM is blind"""

    sample = gen_data1(100, 1.0, stream_generator(3, 0))
    for name in ("gcm", "wgcm", "kgcm1", "kgcm2", "kgcm3"):
        report = run_test(preset_test(name, M=500), sample, seed=4)
        verdict = "reject" if report.reject else "keep"
        print(f"  {name:6s} p-value {report.p_value:.4f} -> {verdict}")

    residuals = fit_residuals(sample, truth=DATA1_TRUTH)
    print(f"\n  regression errors: A_f = {residuals.a_f_hat:.2e}, A_g = {residuals.a_g_hat:.2e}")


def example_spectrum():
    """Example: weighted chi-square approximation of the MMD bootstrap law"""

    sample = gen_two_sample(100, 100, 0.0, stream_generator(4, 0))
    spec = MEDIAN.resolve(sample.pooled)
    estimate, replicates = spectrum_from_builder(mmd_wild_builder(sample), WeightScheme(), sample.n, 300, spec, seed=5)
    draws = sample_weighted_chisq(estimate.eigenvalues, 5000, stream_generator(4, 1))

    print(f"  leading eigenvalues: {[round(v, 4) for v in estimate.eigenvalues[:5]]}")
    print(f"  trace {estimate.trace:.4f} vs mean replicate {np.mean(replicates):.4f}")
    print(f"  KS distance between chi-square draws and replicates: {ks_distance(draws, replicates):.3f}")


def example_power_curve():
    """Example: rejection rate of the MMD test as the shift grows"""

    result = rejection_rate(
        preset_test("mmd", M=200, kernel=MEDIAN),
        GeneratorConfig(name="two_sample", n=60),
        grid=[0.0, 0.5, 1.0],
        reps=50,
        seed=6,
        threads="auto",
    )
    for row in result.rows():
        print(f"  shift {row['param']:.2f}: rate {row['rate']:.2f}  [{row['ci_low']:.2f}, {row['ci_high']:.2f}]")


if __name__ == "__main__":
    print("=" * 60)
    print("Kernelised linear statistics - Examples")
    print("=" * 60)

    print("\n1. Two-sample MMD test:")
    print("-" * 60)
    example_two_sample()

    print("\n\n2. Kernel log-rank test:")
    print("-" * 60)
    example_survival()

    print("\n\n3. Conditional independence:")
    print("-" * 60)
    example_conditional_independence()

    print("\n\n4. Bootstrap spectrum:")
    print("-" * 60)
    example_spectrum()

    print("\n\n5. Power curve:")
    print("-" * 60)
    example_power_curve()
