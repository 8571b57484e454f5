"""Weighted-least-squares bias correction, inclusion procedure, stopping rule."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcmc.errors import ConfigError, DegeneracyWarning, DomainError
from gcmc.regression import (
    RegressionInput,
    StoppingState,
    bias_corrected_estimate,
    mse_decomposition,
    regression_report,
    select_inclusion_set,
    stopping_rule_step,
    weighted_fit,
    weighted_r_squared,
)


def make_input(lambdas, etas, variances):
    return RegressionInput(np.asarray(lambdas, float), np.asarray(etas, float), np.asarray(variances, float))


THREE_POINT = make_input([3.0, 2.0, 1.0], [3.9, 3.1, 2.0], [4.0, 1.0, 1.0])


def normal_equations_intercept(lam, eta, var):
    """Independent check: solve the 2x2 weighted normal equations directly."""
    w = 1.0 / np.asarray(var, float)
    design = np.column_stack([np.ones_like(lam), lam])
    lhs = design.T @ (w[:, None] * design)
    rhs = design.T @ (w * eta)
    return float(np.linalg.solve(lhs, rhs)[0])


class TestBiasCorrectedEstimate:
    def test_exact_line_returns_intercept(self):
        lam = np.array([5.0, 3.0, 2.0, 0.5])
        data = make_input(lam, 1.7 + 0.3 * lam, [2.0, 0.1, 5.0, 1.0])
        assert bias_corrected_estimate(data, range(4)) == pytest.approx(1.7, rel=1e-12)

    def test_two_points(self):
        data = make_input([2.0, 1.0], [5.0, 3.0], [7.0, 0.2])
        assert bias_corrected_estimate(data, [0, 1]) == pytest.approx(1.0, rel=1e-12)

    def test_three_point_against_normal_equations(self):
        got = bias_corrected_estimate(THREE_POINT, [0, 1, 2])
        expected = normal_equations_intercept(THREE_POINT.lambdas, THREE_POINT.etas, THREE_POINT.variances)
        assert got == pytest.approx(expected, rel=1e-12)

    def test_identical_lambdas_rejected_upstream(self):
        with pytest.raises(ConfigError):
            make_input([1.0, 1.0], [0.0, 1.0], [1.0, 1.0])

    def test_needs_two_points(self):
        with pytest.raises(ConfigError):
            bias_corrected_estimate(THREE_POINT, [1])

    @given(
        scale=st.floats(min_value=1e-3, max_value=1e3),
        a=st.floats(min_value=-5, max_value=5),
        c=st.floats(min_value=-5, max_value=5),
    )
    @settings(max_examples=50, deadline=None)
    def test_scale_and_affine_equivariance(self, scale, a, c):
        base = bias_corrected_estimate(THREE_POINT, [0, 1, 2])
        scaled = make_input(THREE_POINT.lambdas, THREE_POINT.etas, THREE_POINT.variances * scale)
        assert bias_corrected_estimate(scaled, [0, 1, 2]) == pytest.approx(base, rel=1e-9)
        mapped = make_input(THREE_POINT.lambdas, a * THREE_POINT.etas + c, THREE_POINT.variances)
        assert bias_corrected_estimate(mapped, [0, 1, 2]) == pytest.approx(a * base + c, rel=1e-9, abs=1e-9)


class TestWeightedRSquared:
    def test_perfect_line(self):
        lam = np.array([4.0, 2.0, 1.0])
        data = make_input(lam, 2.0 - 0.5 * lam, [1.0, 2.0, 3.0])
        fit = weighted_fit(data, range(3))
        assert weighted_r_squared(data, range(3), fit.fitted) == pytest.approx(1.0, rel=1e-12)

    def test_zero_slope_symmetric_data(self):
        data = make_input([3.0, 2.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 1.0])
        # The symmetric bump has zero weighted covariance with lam: slope 0.
        fit = weighted_fit(data, range(3))
        assert fit.slope == pytest.approx(0.0, abs=1e-14)
        assert weighted_r_squared(data, range(3), fit.fitted) == pytest.approx(0.0, abs=1e-14)

    def test_both_forms_agree(self):
        fit = weighted_fit(THREE_POINT, range(3))
        w = 1.0 / THREE_POINT.variances
        eta_tilde = np.sum(THREE_POINT.etas * w) / np.sum(w)
        explained = np.sum(w * (fit.fitted - eta_tilde) ** 2) / np.sum(w * (THREE_POINT.etas - eta_tilde) ** 2)
        residual = 1.0 - np.sum(w * (THREE_POINT.etas - fit.fitted) ** 2) / np.sum(
            w * (THREE_POINT.etas - eta_tilde) ** 2
        )
        got = weighted_r_squared(THREE_POINT, range(3), fit.fitted)
        assert got == pytest.approx(explained, abs=1e-12)
        assert got == pytest.approx(residual, abs=1e-12)

    def test_all_equal_responses_flagged(self):
        data = make_input([3.0, 2.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0])
        fit = weighted_fit(data, range(3))
        with pytest.warns(DegeneracyWarning):
            assert weighted_r_squared(data, range(3), fit.fitted) == 1.0

    @given(seed=st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=50, deadline=None)
    def test_bounds_on_training_data(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 12))
        lam = np.sort(rng.uniform(0.01, 10.0, size=n))[::-1]
        lam += np.arange(n)[::-1] * 1e-6  # ensure strictly decreasing
        data = make_input(lam, rng.normal(size=n), rng.uniform(0.1, 5.0, size=n))
        fit = weighted_fit(data, range(n))
        r2 = weighted_r_squared(data, range(n), fit.fitted)
        assert -1e-10 <= r2 <= 1.0 + 1e-10


class TestInclusionProcedure:
    def test_linear_data_keeps_everything(self):
        lam = np.geomspace(10.0, 0.01, 12)
        data = make_input(lam, 0.3 + 2.0 * lam, np.linspace(1.0, 0.1, 12))
        assert select_inclusion_set(data) == list(range(12))

    def test_three_points_kept(self):
        assert select_inclusion_set(THREE_POINT) == [0, 1, 2]

    def test_planted_kink_dropped_exactly(self):
        lam = np.array([10.0, 8.0, 1.0, 0.8, 0.6, 0.4, 0.2])
        eta = 2.0 + 0.5 * lam
        eta[:2] += 5.0 * lam[:2] ** 2  # strong curvature at the two largest bandwidths
        data = make_input(lam, eta, np.ones(7))
        subset = select_inclusion_set(data)
        assert subset == [2, 3, 4, 5, 6]
        # Exhaustive check over suffix sets: the chosen one maximises R^2 and
        # further drops cannot strictly improve it.
        r2 = {}
        for k in range(0, 5):
            rows = list(range(k, 7))
            fit = weighted_fit(data, rows)
            r2[k] = weighted_r_squared(data, rows, fit.fitted)
        # The chosen suffix reaches the maximum attainable R^2 (up to
        # round-off) and already fits perfectly.
        assert r2[2] >= max(r2.values()) - 1e-12
        assert r2[2] == pytest.approx(1.0, rel=1e-12)
        assert r2[1] < 0.999

    def test_at_most_n_minus_three_drops(self):
        rng = np.random.default_rng(5)
        lam = np.geomspace(20.0, 0.1, 9)
        data = make_input(lam, rng.normal(size=9), rng.uniform(0.5, 1.5, size=9))
        subset = select_inclusion_set(data)
        assert len(subset) >= 3

    def test_scale_invariance_of_selection(self):
        lam = np.array([10.0, 8.0, 1.0, 0.8, 0.6, 0.4, 0.2])
        eta = 2.0 + 0.5 * lam
        eta[:2] += 5.0 * lam[:2] ** 2
        data = make_input(lam, eta, np.ones(7))
        scaled = make_input(lam, eta, 37.5 * np.ones(7))
        assert select_inclusion_set(data) == select_inclusion_set(scaled)


class TestFromSeries:
    def test_zero_variance_points_excluded_with_warning(self):
        with pytest.warns(DegeneracyWarning):
            data = RegressionInput.from_series([3.0, 2.0, 1.0], [1.0, 2.0, 3.0], [1.0, 0.0, 1.0])
        assert len(data) == 2
        np.testing.assert_array_equal(data.source_indices, [0, 2])

    def test_monotonicity_enforced(self):
        with pytest.raises(ConfigError):
            make_input([1.0, 2.0], [0.0, 0.0], [1.0, 1.0])


class TestMseDecomposition:
    def test_trivials(self):
        assert mse_decomposition(0.0, 0.7) == 0.7
        assert mse_decomposition(-0.3, 0.0) == pytest.approx(0.09)

    def test_worked_value(self):
        # Bias and variance/N of the n-form toy at lam=1, chain length 10.
        assert mse_decomposition(-0.28409, 0.046875) == pytest.approx((-0.28409) ** 2 + 0.046875, rel=1e-12)
        assert mse_decomposition(-0.28409, 0.046875) == pytest.approx(0.12758, abs=5e-6)

    def test_negative_variance_rejected(self):
        with pytest.raises(DomainError):
            mse_decomposition(0.1, -1e-9)


class TestStoppingRule:
    def test_kappa_one_stops_at_first_defined_estimate(self):
        state = StoppingState(kappa=1)
        first = stopping_rule_step(state, 2.0, 5.0, 1.0)
        assert not first.stop  # only one point: no regression yet
        second = stopping_rule_step(state, 1.0, 4.0, 1.0)
        assert second.stop
        assert second.chosen_index is not None
        assert second.bias_corrected is not None

    def test_constructed_trace_stops_at_step_19_choosing_index_5(self):
        state = StoppingState(kappa=15)
        variances = {5: 0.01}
        decision = None
        for q in range(40):
            lam = 2.0**-q
            v = variances.get(q, 1.0 if q < 5 else 0.2)
            decision = stopping_rule_step(state, lam, lam, v)  # eta exactly linear: eta = lam
            if decision.stop:
                break
        assert decision.stop
        assert decision.step == 19
        assert decision.chosen_index == 5
        np.testing.assert_allclose(decision.bias_corrected, [0.0], atol=1e-12)

    def test_chosen_index_never_exceeds_step(self):
        rng = np.random.default_rng(6)
        state = StoppingState(kappa=3)
        lam = 4.0
        for _ in range(30):
            lam *= 0.8
            decision = stopping_rule_step(state, lam, rng.normal(), rng.uniform(0.5, 1.0))
            if decision.argmin_index is not None:
                assert decision.argmin_index <= decision.step
            if decision.stop:
                assert decision.chosen_index <= decision.step
                break

    def test_replaying_trace_reproduces_decision(self):
        rng = np.random.default_rng(7)
        steps = []
        lam = 8.0
        for _ in range(25):
            lam *= 0.7
            steps.append((lam, 1.0 + 0.5 * lam + 0.01 * rng.normal(), float(rng.uniform(0.3, 0.6))))

        def run():
            state = StoppingState(kappa=5)
            out = []
            for lam_p, eta_p, v_p in steps:
                decision = stopping_rule_step(state, lam_p, eta_p, v_p)
                out.append((decision.stop, decision.argmin_index))
                if decision.stop:
                    break
            return out

        assert run() == run()

    def test_degenerate_steps_excluded_from_candidates(self):
        state = StoppingState(kappa=2)
        stopping_rule_step(state, 4.0, 10.0, 1.0)
        # Degenerate variance: recorded but not a candidate or regression point.
        decision = stopping_rule_step(state, 2.0, 0.0, 0.0)
        assert not decision.stop
        assert state.inclusion[0] == [0]
        d3 = stopping_rule_step(state, 1.0, 9.0, 1.0)
        if d3.argmin_index is not None:
            assert d3.argmin_index != 1

    def test_vector_components_share_argmin(self):
        state = StoppingState(kappa=2)
        for q in range(6):
            lam = 2.0**-q
            eta = np.array([lam, 2.0 * lam])
            decision = stopping_rule_step(state, lam, eta, np.array([0.1, 0.1]))
        assert decision.bias_corrected.shape == (2,)

    def test_kappa_validation(self):
        with pytest.raises(ConfigError):
            StoppingState(kappa=0)


class TestReport:
    def test_report_fields(self):
        report = regression_report([THREE_POINT], stopped_at=7, chosen_index=3)
        assert set(report) == {"S", "intercept", "slope", "r_squared", "stopped_at", "chosen_index"}
        assert report["S"] == [0, 1, 2]
        assert report["stopped_at"] == 7
        import json

        assert json.dumps(report)
