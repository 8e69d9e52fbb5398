import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from theoryforge import symbolic as sym


def gravity_row():
    return sym.affine_row([sym.Const.integer(0), sym.Const.integer(0), sym.Const.integer(-1),
                           sym.Const.integer(0), sym.Const.integer(2), sym.Const.integer(0)],
                          sym.Const.rational(-1, 200))


class TestConst:
    def test_rational_lowest_terms(self):
        with pytest.raises(ValueError):
            sym.Const(0.5, sym.RATIONAL, 2, 4)

    def test_rational_with_unit_denominator_is_integer(self):
        assert sym.Const.rational(3, 1).kind == sym.INTEGER

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            sym.Const(1.0, "complex")


class TestConvergents:
    def test_pi(self):
        conv = list(sym.convergents(math.pi))
        assert conv[:4] == [(3, 1), (22, 7), (333, 106), (355, 113)]

    def test_terminates_on_rationals(self):
        assert list(sym.convergents(0.75)) == [(0, 1), (1, 1), (3, 4)]

    def test_negative(self):
        assert (-22, 7) in list(sym.convergents(-math.pi))

    def test_denominator_cap(self):
        assert all(n <= 100 for _, n in sym.convergents(math.e, max_den=100))

    @settings(max_examples=100)
    @given(st.floats(-1e3, 1e3, allow_nan=False))
    def test_increasing_denominators_and_error(self, x):
        conv = list(sym.convergents(x, 10_000))
        dens = [n for _, n in conv]
        assert dens == sorted(dens)
        errs = [abs(Fraction(m, n) - Fraction(x)) for m, n in conv]
        assert all(b <= a for a, b in zip(errs, errs[1:]))

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            list(sym.convergents(math.inf))


class TestTrees:
    def test_affine_row_shape(self):
        assert sym.to_str(gravity_row()) == "-x2 + 2*x4 - 1/200"

    def test_evaluate(self):
        X = np.arange(12.0).reshape(2, 6)
        np.testing.assert_allclose(sym.evaluate(gravity_row(), X), -X[:, 2] + 2 * X[:, 4] - 0.005)

    def test_unbound_parameter(self):
        with pytest.raises(KeyError):
            sym.evaluate(sym.Param("p1"), np.zeros((1, 2)))

    def test_dict_round_trip(self):
        e = sym.Add((sym.Mul((sym.Param("p1"), sym.Var(3))), sym.Neg(sym.Var(0)), sym.Const.real(0.25)))
        assert sym.from_dict(sym.to_dict(e)) == e

    def test_canonical_orders_terms(self):
        e = sym.Add((sym.Const.integer(1), sym.Var(4), sym.Mul((sym.Const.integer(3), sym.Var(1)))))
        assert sym.to_str(sym.canonical(e)) == "3*x1 + x4 + 1"

    def test_skeleton_hides_constants(self):
        a = gravity_row()
        b = sym.affine_row([sym.Const.integer(0)] * 2 + [sym.Const.integer(-1), sym.Const.integer(0),
                            sym.Const.integer(2), sym.Const.integer(0)], sym.Const.real(-0.004))
        assert sym.skeleton(a) == sym.skeleton(b) and a != b

    @settings(max_examples=60)
    @given(st.lists(st.sampled_from([-2, -1, 0, 1, 3]), min_size=4, max_size=4), st.integers(-5, 5))
    def test_affine_coefficients_inverts_affine_row(self, ints, bias):
        coeffs = [sym.Const.integer(m) for m in ints]
        e = sym.affine_row(coeffs, sym.Const.integer(bias))
        back, b = sym.affine_coefficients(e, 4)
        assert [c.value for c in back] == [float(m) for m in ints]
        assert b.value == float(bias)

    def test_affine_coefficients_rejects_products(self):
        with pytest.raises(ValueError):
            sym.affine_coefficients(sym.Mul((sym.Var(0), sym.Var(1))), 2)
