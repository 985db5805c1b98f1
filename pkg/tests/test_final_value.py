import numpy as np
import pytest

from ctmflow.errors import DegenerateDenominator, NoConvergenceDetected, ObserveAfterTermination
from ctmflow.final_value import HankelDetector, final_value, learn_coefficients, run_to_final


def test_geometric_sequence_needs_four_observations():
    d = HankelDetector()
    for y in (0.0, 1.0, 1.5, 1.75):
        d.observe(y)
    assert d.status == "defective"
    assert final_value(d.coefficients(), d.window()) == pytest.approx(2.0)
    with pytest.raises(ObserveAfterTermination):
        d.observe(1.875)


def test_constant_sequence():
    d = HankelDetector()
    d.observe(3.0).observe(3.0)
    assert d.status == "defective"
    assert final_value(d.coefficients(), d.window()) == pytest.approx(3.0)


def test_final_value_degenerate_denominator():
    with pytest.raises(DegenerateDenominator):
        final_value([1.0, -1.0], [2.0, 3.0])
    with pytest.raises(ValueError):
        final_value([1.0], [2.0, 3.0])


@pytest.mark.parametrize("seed", range(20))
def test_random_stable_recursion(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    M = rng.normal(size=(n, n))
    M *= 0.8 / max(np.max(np.abs(np.linalg.eigvals(M))), 1e-12)
    m = rng.normal(size=n)
    exact = np.linalg.solve(np.eye(n) - M, m)
    for r in range(n):
        res = run_to_final((M, m), r, rng.uniform(size=n), rng=rng)
        assert res.y_inf == pytest.approx(exact[r], abs=1e-7)
        assert res.D <= 2 * n + 2


def test_low_degree_minimal_polynomial_stops_early():
    # two distinct eigenvalues: the window does not grow with n
    n = 12
    Q = np.linalg.qr(np.random.default_rng(0).normal(size=(n, n)))[0]
    M = Q @ np.diag([0.5] * 6 + [-0.3] * 6) @ Q.T
    m = np.ones(n)
    res = run_to_final((M, m), 0, np.zeros(n))
    assert res.D <= 6
    assert res.y_inf == pytest.approx(np.linalg.solve(np.eye(n) - M, m)[0], abs=1e-9)


def test_learned_coefficients_reused_from_other_start():
    rng = np.random.default_rng(5)
    n = 6
    M = rng.uniform(0, 1, (n, n))
    M *= 0.7 / np.max(np.abs(np.linalg.eigvals(M)))
    m = rng.uniform(size=n)
    thetas, D = learn_coefficients((M, m), rng.uniform(size=n))
    exact = np.linalg.solve(np.eye(n) - M, m)
    # the coefficients belong to the matrix pair, not to the starting point
    x = rng.uniform(size=n) * 10
    hist = [x.copy()]
    for _ in range(int(D.max())):
        x = M @ x + m
        hist.append(x.copy())
    hist = np.array(hist)
    for i in range(n):
        k = thetas[i].size
        assert final_value(thetas[i], hist[D[i] - k:D[i], i]) == pytest.approx(exact[i], abs=1e-6)


def test_cap_raises():
    M = np.array([[0.999]])
    with pytest.raises(NoConvergenceDetected):
        run_to_final((M, np.array([1.0])), 0, np.array([0.0]), max_obs=1)
