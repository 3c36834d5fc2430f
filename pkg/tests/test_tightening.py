import numpy as np
import pytest

from ddmpc import (
    SystemConstants,
    compute_coefficients,
    feasibility_precheck,
    tightened_margin,
)

RHO = [3.9, 6.39, 7.869, 8.1099, 7.14429, 5.198859, 2.6341389,
       1.00885797, 2.650501251, 4.590846242]


def constants(gamma=38.395155921, c_pe=8.2, xi_max=60.0, rho=RHO):
    return SystemConstants(gamma=gamma, rho=rho, rho_start=3, c_pe=c_pe, xi_max=xi_max)


class TestRecursion:
    def test_zero_noise_limit(self):
        co = compute_coefficients(constants(), 0.0, 10, 3)
        assert np.all(co.a1 == 0.0)
        assert np.all(co.a2 == 0.0)
        assert np.all(co.a4 == 0.0)
        rho_n_max = max(RHO[:3])
        for k in range(3):
            assert co.a3[k] == 1.0 + rho_n_max
        for k in range(3, 7):
            assert co.a3[k] == 1.0 + RHO[k]  # rho at step n + k

    def test_collapsed_recursion_without_amplification(self):
        eps = 1e-3
        co = compute_coefficients(constants(gamma=0.0, c_pe=0.0), eps, 10, 3)
        assert np.all(co.a1 == 0.0)
        for k in range(4):
            expected = co.a4[k] + eps * RHO[k + 3] + eps * co.a3[k]
            assert co.a4[k + 3] == pytest.approx(expected, rel=1e-15)

    def test_first_chain_identity(self, example_constants):
        eps = 1e-4
        co = compute_coefficients(example_constants, eps, 10, 3)
        expected = 2 * eps * (1.0 + example_constants.rho_n_max) * example_constants.c_pe
        assert co.a1[3] == expected  # bit-for-bit: same arithmetic order

    def test_slack_weight_proportionality_exact(self, example_coeffs):
        eps = example_coeffs.noise_bound
        assert np.array_equal(example_coeffs.a2, eps * example_coeffs.a3)

    def test_monotone_in_noise(self):
        cs = constants()
        levels = [1e-5, 1e-4, 1e-3]
        tables = [compute_coefficients(cs, e, 10, 3) for e in levels]
        for lo, hi in zip(tables, tables[1:]):
            assert np.all(lo.a1 <= hi.a1)
            assert np.all(lo.a2 <= hi.a2)
            assert np.all(lo.a4 <= hi.a4)

    def test_linear_leading_order_in_noise(self):
        cs = constants()
        tiny = compute_coefficients(cs, 1e-6, 10, 3)
        small = compute_coefficients(cs, 1e-5, 10, 3)
        mid = compute_coefficients(cs, 1e-4, 10, 3)
        big = compute_coefficients(cs, 1e-3, 10, 3)
        # base-case entries are exactly linear in the bound
        assert mid.a4[0] / small.a4[0] == pytest.approx(10.0, rel=1e-12)
        assert big.a4[0] / mid.a4[0] == pytest.approx(10.0, rel=1e-12)
        assert mid.a2[0] / small.a2[0] == pytest.approx(10.0, rel=1e-3)
        # chained entries: higher-order terms fade, ratios fall toward 10
        for arr in ("a2", "a4"):
            r_big = getattr(big, arr)[-1] / getattr(mid, arr)[-1]
            r_mid = getattr(mid, arr)[-1] / getattr(small, arr)[-1]
            r_small = getattr(small, arr)[-1] / getattr(tiny, arr)[-1]
            assert r_big > r_mid > r_small > 10.0
        assert small.a4[-1] / tiny.a4[-1] == pytest.approx(10.0, rel=0.05)

    def test_chain_monotone(self, example_coeffs):
        n = example_coeffs.order
        for start in range(n):
            chain = range(start, example_coeffs.count, n)
            a1 = example_coeffs.a1[list(chain)]
            a4 = example_coeffs.a4[list(chain)]
            assert np.all(np.diff(a1) >= 0)
            assert np.all(np.diff(a4) >= 0)

    def test_horizon_too_short(self):
        with pytest.raises(ValueError):
            compute_coefficients(constants(), 1e-4, 5, 3)

    def test_incomplete_rho(self):
        cs = SystemConstants(gamma=1.0, rho=RHO[:5], rho_start=3, c_pe=1.0, xi_max=1.0)
        with pytest.raises(ValueError):
            compute_coefficients(cs, 1e-4, 10, 3)

    def test_coverage(self, example_coeffs):
        assert example_coeffs.count == 7  # steps 0 .. L - n - 1

    def test_json_roundtrip(self, tmp_path, example_coeffs):
        from ddmpc import TighteningCoefficients

        path = tmp_path / "coeffs.json"
        example_coeffs.save(path)
        loaded = TighteningCoefficients.from_dict(
            __import__("json").loads(path.read_text()))
        assert np.array_equal(loaded.a1, example_coeffs.a1)
        assert np.array_equal(loaded.a4, example_coeffs.a4)


class TestPrecheck:
    def test_example_noise_level_feasible(self, example_coeffs):
        report = feasibility_precheck(example_coeffs, 10.0)
        assert report.feasible
        assert report.flagged == ()

    def test_large_noise_flagged(self, example_constants):
        co = compute_coefficients(example_constants, 0.01, 10, 3)
        report = feasibility_precheck(co, 10.0)
        assert not report.feasible
        assert len(report.flagged) > 0

    def test_zero_noise_never_flagged(self, example_constants):
        co = compute_coefficients(example_constants, 0.0, 10, 3)
        assert feasibility_precheck(co, 10.0).feasible

    def test_bisection_brackets_the_threshold(self, example_constants, example_coeffs):
        report = feasibility_precheck(example_coeffs, 10.0)
        eps = report.max_admissible_noise
        ok = compute_coefficients(example_constants, eps, 10, 3)
        assert np.all(ok.a4 < 10.0)
        bad = compute_coefficients(example_constants, eps * 1.05, 10, 3)
        assert np.any(bad.a4 >= 10.0)


class TestMargin:
    def test_zero_norms(self, example_coeffs):
        for k in range(example_coeffs.count):
            assert tightened_margin(example_coeffs, k, 0, 0, 0) == example_coeffs.a4[k]

    def test_nominal_recovery(self, example_constants):
        co = compute_coefficients(example_constants, 0.0, 10, 3)
        assert tightened_margin(co, 4, 100.0, 50.0, 0.0) == 0.0

    def test_index_range(self, example_coeffs):
        with pytest.raises(IndexError):
            tightened_margin(example_coeffs, 7, 0, 0, 0)
