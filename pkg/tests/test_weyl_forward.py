import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import smooth_12, smooth_21
from diracweyl.errors import InvalidInputError, NonConvergenceError, NonExpansiveError, SingularityError
from diracweyl.fields import Dimensions, Grid, Potential
from diracweyl.weyl_forward import (
    PropertyJPair, WeylSampleSet, check_nonexpansive, mobius_point, riccati_backward, weyl_callable,
    weyl_function, weyl_function_batch, weyl_l2_criterion,
)
from diracweyl.dirac_core import solve_dirac
from oracles import constant_propagator, constant_weyl

finite = st.floats(-2, 2, allow_nan=False, allow_infinity=False)
cplx = st.builds(complex, finite, finite)


def test_mobius_identity_propagator():
    phi = mobius_point(np.eye(2), np.array([[1.0], [0.0]]))
    assert phi[0, 0] == 0


def test_mobius_tilted_pair():
    phi = mobius_point(np.diag([np.exp(-1), np.e]), np.array([[1.0], [1.0]]) / np.sqrt(2))
    np.testing.assert_allclose(phi, [[np.exp(-2)]], rtol=1e-14)


def test_mobius_singular_block():
    with pytest.raises(SingularityError):
        mobius_point(np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([[1.0], [0.0]]))


def test_property_j_pair_validation():
    d = Dimensions(1, 1)
    with pytest.raises(InvalidInputError):
        PropertyJPair(np.array([[0.0], [1.0]]), d)
    with pytest.raises(InvalidInputError):
        PropertyJPair(np.zeros((2, 1)), d)
    with pytest.raises(InvalidInputError):
        PropertyJPair(np.ones((3, 1)), d)
    np.testing.assert_array_equal(PropertyJPair.default(Dimensions(2, 1)).terminal_value(), np.zeros((1, 2)))


@given(c=cplx, x=finite, y=st.floats(0.1, 3), l=st.floats(0.1, 3), p=st.floats(-0.99, 0.99))
@settings(max_examples=40, deadline=None)
def test_mobius_points_are_contractions(c, x, y, l, p):
    u = constant_propagator(c, complex(x, y), l)
    phi = mobius_point(u, np.array([[1.0], [p]]))
    assert abs(phi[0, 0]) <= 1 + 1e-9


def test_weyl_zero_potential():
    for z in (1j, 3 + 0.5j, -2 + 4j):
        assert np.abs(weyl_function(Potential.zero(2, 1), z).value).max() == 0


def test_weyl_unit_against_long_mobius():
    u = constant_propagator(1.0, 1j, 40.0)
    ref = mobius_point(u, np.array([[1.0], [0.0]]))
    np.testing.assert_allclose(weyl_function(Potential.constant(1.0), 1j).value, ref, atol=1e-6)


@pytest.mark.parametrize("c,z", [(1.0, 1j), (0.5 - 0.3j, 2 + 1j), (2j, -1 + 0.5j), (1.0, 200j), (0.7, 150 + 2j)])
def test_weyl_constant_closed_form(c, z):
    np.testing.assert_allclose(weyl_function(Potential.constant(c), z).value[0, 0],
                               constant_weyl(c, z), atol=1e-10)


def test_weyl_smooth_converges():
    w = weyl_function(smooth_12(), 2j)
    assert w.achieved_error < 1e-10
    assert np.linalg.norm(w.value, 2) <= 1
    assert w.value.shape == (2, 1)


def test_weyl_independent_of_pair():
    v = smooth_12()
    a = weyl_function(v, 2j).value
    b = weyl_function(v, 2j, P=PropertyJPair(np.array([[1.0], [0.5], [0.2j]]), v.dims)).value
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_riccati_matches_mobius_at_fixed_length():
    v = smooth_21()
    z = 1 + 1j
    psi = riccati_backward(v, [z], 3.0, 1 / 256)[0]
    u = solve_dirac(v, z, Grid(3.0, 3 * 4096)).at(3.0)
    np.testing.assert_allclose(psi, mobius_point(u, PropertyJPair.default(v.dims)), atol=1e-6)


def test_weyl_nonconvergence_carries_best():
    with pytest.raises(NonConvergenceError) as exc:
        weyl_function(Potential.constant(1.0), 0.01 + 0.001j, l_max=5.0)
    assert exc.value.best.shape == (1, 1)
    assert exc.value.residual > 0


def test_batch_matches_scalar_calls():
    v = smooth_21()
    zs = np.array([1j, 2 + 1j, -3 + 0.5j])
    vals, errs, lens = weyl_function_batch(v, zs)
    for z, val in zip(zs, vals):
        np.testing.assert_allclose(val, weyl_function(v, z).value, atol=1e-10)
    assert np.all(errs < 1e-10) and np.all(lens > 0)
    np.testing.assert_allclose(weyl_callable(v)(zs), vals)


def test_batch_rejects_lower_half_plane():
    with pytest.raises(InvalidInputError):
        weyl_function_batch(Potential.zero(1, 1), [1j, -1j])


@given(c=cplx, x=st.floats(-5, 5), y=st.floats(0.3, 5))
@settings(max_examples=25, deadline=None)
def test_weyl_nonexpansive_property(c, x, y):
    phi = weyl_function(Potential.constant(c), complex(x, y)).value
    assert np.linalg.norm(phi, 2) <= 1 + 1e-8


def test_l2_criterion_free():
    val = weyl_l2_criterion(Potential.zero(1, 1), 0.0, 1j, 10.0)
    assert val == pytest.approx((1 - np.exp(-20)) / 2, rel=1e-4)


def test_l2_criterion_wrong_value_diverges():
    v = Potential.zero(1, 1)
    val = weyl_l2_criterion(v, 0.5, 1j, 10.0)
    assert val >= 0.25 * (np.exp(20) - 1) / 2
    assert weyl_l2_criterion(v, 0.5, 1j, 12.0) > 10 * val


def test_l2_criterion_bounded_for_weyl_value():
    v = Potential.constant(1.0)
    phi = weyl_function(v, 1j).value
    a = weyl_l2_criterion(v, phi, 1j, 10.0)
    b = weyl_l2_criterion(v, phi, 1j, 20.0)
    assert abs(b - a) <= 0.1 * a


def test_check_nonexpansive():
    check_nonexpansive(np.eye(2)[None])
    with pytest.raises(NonExpansiveError):
        check_nonexpansive(np.array([[[1.5]]]))


def test_sample_set_validation():
    d = Dimensions(1, 1)
    s = WeylSampleSet([1j, 1 + 1j, 2 + 1j], np.zeros(3), d)
    assert len(s) == 3 and s.horizontal_line() == (1.0, 0.0, 2.0, 3)
    with pytest.raises(InvalidInputError):
        WeylSampleSet([1j, -1j], np.zeros(2), d)
    with pytest.raises(NonExpansiveError):
        WeylSampleSet([1j], [[1.5]], d)
    with pytest.raises(InvalidInputError):
        WeylSampleSet([1j], [[np.nan]], d)
    with pytest.raises(InvalidInputError):
        WeylSampleSet([1j, 1 + 2j], np.zeros(2), d).horizontal_line()
