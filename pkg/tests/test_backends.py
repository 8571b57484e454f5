"""Compiled kernels against the pure-numpy fallback on identical inputs."""

import numpy as np
import pytest

from gcmc import _backend, _kernels_py

pytestmark = pytest.mark.skipif(
    not _backend.COMPILED, reason="compiled extension not available; nothing to compare"
)

from gcmc import _speedups  # noqa: E402  (guarded by the skip above)


def gibbs_inputs(b, n, seed):
    rng = np.random.default_rng(seed)
    return {
        "mu0": 0.3,
        "tau0": 0.8,
        "mu": rng.normal(size=b),
        "s2": rng.uniform(0.5, 2.0, size=b),
        "c": rng.uniform(0.5, 2.0, size=b),
        "lam": 0.7,
        "z0": 0.1,
        "xnorm": rng.standard_normal((b, n)),
        "znorm": rng.standard_normal(n),
        "keep_x": True,
    }


class TestGibbsChainParity:
    def test_single_block_bitwise(self):
        kwargs = gibbs_inputs(1, 5000, 0)
        z_c, x_c = _speedups.gaussian_gibbs_chain(**kwargs)
        z_p, x_p = _kernels_py.gaussian_gibbs_chain(**kwargs)
        np.testing.assert_array_equal(z_c, z_p)
        np.testing.assert_array_equal(x_c, x_p)

    def test_many_blocks_close(self):
        # The fallback sums block contributions with pairwise summation, so
        # agreement is to round-off, not bitwise.
        kwargs = gibbs_inputs(32, 20_000, 1)
        z_c, x_c = _speedups.gaussian_gibbs_chain(**kwargs)
        z_p, x_p = _kernels_py.gaussian_gibbs_chain(**kwargs)
        np.testing.assert_allclose(z_c, z_p, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(x_c, x_p, rtol=1e-9, atol=1e-12)

    def test_uniform_prior(self):
        kwargs = gibbs_inputs(4, 2000, 2)
        kwargs["tau0"] = 0.0
        z_c, _ = _speedups.gaussian_gibbs_chain(**kwargs)
        z_p, _ = _kernels_py.gaussian_gibbs_chain(**kwargs)
        np.testing.assert_allclose(z_c, z_p, rtol=1e-9)


class TestRwmParity:
    @pytest.mark.parametrize("log_space", [False, True])
    def test_chains_identical(self, log_space):
        rng = np.random.default_rng(3)
        b, n = 6, 4000
        q2 = -np.abs(rng.uniform(0.3, 1.0, size=b))
        q1 = rng.normal(size=b)
        z0 = np.exp(rng.normal(size=b)) if log_space else rng.normal(size=b)
        step = rng.uniform(0.5, 2.0, size=b)
        norms = rng.standard_normal((b, n))
        unifs = rng.random((b, n))
        out_c, acc_c = _speedups.rwm_quad_chains(log_space, q1, q2, z0, step, norms, unifs)
        out_p, acc_p = _kernels_py.rwm_quad_chains(log_space, q1, q2, z0, step, norms, unifs)
        np.testing.assert_array_equal(out_c, out_p)
        np.testing.assert_array_equal(acc_c, acc_p)

    def test_invalid_log_space_start(self):
        bad = np.array([-1.0])
        ones = np.ones((1, 3))
        with pytest.raises(ValueError):
            _speedups.rwm_quad_chains(True, np.zeros(1), -np.ones(1), bad, np.ones(1), ones, ones)
        with pytest.raises(ValueError):
            _kernels_py.rwm_quad_chains(True, np.zeros(1), -np.ones(1), bad, np.ones(1), ones, ones)


def test_backend_selection_reports_compiled():
    assert _backend.BACKEND == "compiled"
    assert _backend.gaussian_gibbs_chain is _speedups.gaussian_gibbs_chain
