import numpy as np
import pytest

from megcn.autodiff import Param, backward, finite_diff_grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def max_rel_error(analytic, numeric, floor=1e-3):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


def check_grads(loss_fn, params, h=1e-5, tol=1e-4):
    """Compare tape gradients of ``loss_fn()`` against central differences for every param."""
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    for p in params:
        def f(v, p=p):
            old = p.data
            p.data = v
            try:
                return float(loss_fn().data)
            finally:
                p.data = old

        numeric = finite_diff_grad(f, p.data, h)
        err = max_rel_error(p.grad, numeric)
        assert err <= tol, f"{p.name or p.shape}: relative error {err:.3e}"


def make_param(rng, *shape, name=""):
    return Param(rng.normal(size=shape), name=name)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in module.RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}")
