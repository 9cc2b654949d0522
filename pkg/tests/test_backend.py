import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poetcov import _backend

compiled = _backend.compiled_kernels
py = _backend.python_kernels
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2 ** 31), st.sampled_from([0, 1, 2, 3]),
       st.floats(2.1, 6.0), st.floats(1.0, 4.0))
def test_shrink_kernels_agree(n, seed, rule, a, eta):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n) * 3
    tau = np.abs(rng.standard_normal(n))
    tau[::3] = np.abs(z[::3])  # boundary cases
    c = compiled.shrink_array(z, tau, rule, a, eta)
    p = py.shrink_array(z, tau, rule, a, eta)
    # same support exactly; values may differ by an ulp (libm pow vs numpy power)
    np.testing.assert_array_equal(c == 0, p == 0)
    np.testing.assert_allclose(c, p, rtol=4e-16, atol=0)


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 25), st.integers(0, 2 ** 31), st.sampled_from([0, 1, 2, 3]))
def test_threshold_kernels_agree(p, seed, rule):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((p, p))
    raw = A + A.T
    tau = np.abs(rng.standard_normal((p, p)))
    tau = tau + tau.T
    c = compiled.threshold_matrix(raw, tau, rule)
    p = py.threshold_matrix(raw, tau, rule)
    np.testing.assert_array_equal(c == 0, p == 0)
    np.testing.assert_allclose(c, p, rtol=4e-16, atol=0)


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 25), st.integers(2, 60), st.integers(0, 2 ** 31))
def test_moment_kernels_agree(p, T, seed):
    U = np.random.default_rng(seed).standard_normal((p, T))
    s1, t1 = compiled.residual_moments(U)
    s2, t2 = py.residual_moments(U)
    np.testing.assert_allclose(s1, s2, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(t1, t2, rtol=1e-12, atol=1e-14)


@needs_compiled
def test_kernels_accept_read_only_input():
    U = np.random.default_rng(0).standard_normal((4, 10))
    U.setflags(write=False)
    compiled.residual_moments(U)
    compiled.shrink_array(U, np.broadcast_to(0.5, U.shape), 1)


def test_environment_switch_forces_fallback():
    env = dict(os.environ, POETCOV_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import poetcov._backend as b; print(b.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert _backend.BACKEND in ("cython", "python")
