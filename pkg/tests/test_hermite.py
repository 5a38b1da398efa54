import math

import numpy as np
import pytest
import sympy

from asclt_lab.errors import DomainError
from asclt_lab.hermite import hermite_eval, hermite_map


def rodrigues(q):
    # H_q(x) = (-1)^q e^{x^2/2} d^q/dx^q e^{-x^2/2}
    x = sympy.Symbol("x")
    w = sympy.exp(-x**2 / 2)
    expr = sympy.expand(sympy.simplify((-1) ** q * sympy.diff(w, x, q) / w))
    return sympy.lambdify(x, expr, "numpy")


class TestHermiteEval:
    @pytest.mark.parametrize("x", [-2.5, -1.0, 0.0, 0.3, 1.7])
    def test_low_orders(self, x):
        assert hermite_eval(0, x) == 1.0
        assert hermite_eval(1, x) == x
        assert hermite_eval(2, x) == pytest.approx(x**2 - 1, abs=1e-14)
        assert hermite_eval(3, x) == pytest.approx(x**3 - 3 * x, abs=1e-13)

    def test_h2_at_zero(self):
        assert hermite_eval(2, 0.0) == -1.0

    @pytest.mark.parametrize("x,expected", [(0, 3), (1, -2), (2, -5)])
    def test_h4_spots(self, x, expected):
        assert hermite_eval(4, x) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("q", [-1, -3])
    def test_negative_order(self, q):
        with pytest.raises(DomainError):
            hermite_eval(q, 1.0)

    def test_fractional_order(self):
        with pytest.raises(DomainError):
            hermite_eval(1.5, 1.0)

    @pytest.mark.parametrize("q", range(7))
    def test_matches_rodrigues(self, q):
        grid = np.linspace(-4, 4, 81)
        ref = np.broadcast_to(np.asarray(rodrigues(q)(grid), dtype=float), grid.shape)
        got = hermite_map(q, grid)
        np.testing.assert_allclose(got, ref, rtol=1e-9, atol=1e-9)


class TestHermiteMap:
    def test_examples(self):
        np.testing.assert_array_equal(hermite_map(2, [0, 1]), [-1.0, 0.0])
        assert hermite_map(3, []).shape == (0,)
        np.testing.assert_allclose(hermite_map(3, [2]), [2.0])

    def test_shape_preserved(self):
        x = np.arange(12.0).reshape(3, 4)
        out = hermite_map(3, x)
        assert out.shape == x.shape
        assert out.dtype == np.float64
        assert out[1, 2] == hermite_eval(3, 6.0)

    def test_orthogonality(self):
        rng = np.random.default_rng(20240601)
        z = rng.standard_normal(10**6)
        H = np.stack([hermite_map(p, z) for p in range(6)])
        for p in range(6):
            for q in range(6):
                prod = H[p] * H[q]
                mean = prod.mean()
                se = prod.std(ddof=1) / math.sqrt(z.size)
                target = math.factorial(q) if p == q else 0.0
                assert abs(mean - target) <= 3 * se + 1e-12, (p, q, mean, se)
