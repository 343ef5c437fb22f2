import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import smooth_12, suite
from diracweyl.dirac_core import (
    beta_gamma, block_V, jrelation_residuals, potential_from_beta_gamma, schur_coefficient, solve_dirac,
)
from diracweyl.errors import ContractionError, IntegrationOverflowError, InvalidInputError, SingularityError
from diracweyl.fields import Dimensions, Grid, MatrixField, Potential
from oracles import constant_beta_gamma, constant_propagator

finite = st.floats(-2, 2, allow_nan=False, allow_infinity=False)
cplx = st.builds(complex, finite, finite)


def test_free_system_diagonal():
    u = solve_dirac(Potential.zero(1, 1), 1j, Grid(1.0, 16)).at(1.0)
    np.testing.assert_allclose(u, np.diag([np.exp(-1), np.e]), atol=1e-12)


def test_unit_potential_at_zero():
    u = solve_dirac(Potential.constant(1.0), 0.0, Grid(1.0, 1024)).at(1.0)
    ref = np.array([[np.cosh(1), 1j * np.sinh(1)], [-1j * np.sinh(1), np.cosh(1)]])
    np.testing.assert_allclose(u, ref, atol=1e-6)


@pytest.mark.parametrize("c,z", [(1.0, 1j), (0.5 - 0.3j, 2 + 1j), (2j, -1 + 0.5j)])
def test_constant_oracle(c, z):
    u = solve_dirac(Potential.constant(c), z, Grid(2.0, 1024)).at(2.0)
    np.testing.assert_allclose(u, constant_propagator(c, z, 2.0), atol=1e-5)


def test_second_order_convergence():
    errs = []
    for n in (64, 128, 256):
        u = solve_dirac(Potential.constant(1.0), 1 + 1j, Grid(1.0, n)).at(1.0)
        errs.append(np.linalg.norm(u - constant_propagator(1.0, 1 + 1j, 1.0)))
    # constant coefficients make midpoint steps exact
    assert max(errs) < 1e-12
    v = smooth_12()
    ref = solve_dirac(v, 1j, Grid(1.0, 2048)).at(1.0)
    e = [np.linalg.norm(solve_dirac(v, 1j, Grid(1.0, n)).at(1.0) - ref) for n in (64, 128)]
    assert 3.0 < e[0] / e[1] < 5.0


def test_overflow_is_explicit():
    with pytest.raises(IntegrationOverflowError):
        solve_dirac(Potential.zero(1, 1), 1000j, Grid(1.0, 8))


def test_nonfinite_potential_rejected():
    g = Grid(1.0, 4)
    vals = np.zeros((5, 1, 1))
    vals[3] = np.inf
    with pytest.raises(InvalidInputError):
        solve_dirac(MatrixField(g, vals), 1j, g)


def test_block_V_hermitian():
    v = np.array([[[1 + 2j, 3j]]])
    V = block_V(v)
    np.testing.assert_array_equal(V[0], V[0].conj().T)


@given(c=st.lists(cplx, min_size=2, max_size=2), z=finite)
@settings(max_examples=25, deadline=None)
def test_real_z_preserves_j(c, z):
    v = Potential.constant(np.array([c]))
    sol = solve_dirac(v, z, Grid(1.0, 16))
    assert np.abs(sol.jform_defect()).max() < 1e-11


@given(c=st.lists(cplx, min_size=2, max_size=2), x=finite, y=st.floats(0.05, 2))
@settings(max_examples=25, deadline=None)
def test_upper_half_plane_defect_psd(c, x, y):
    v = Potential.constant(np.array(c).reshape(2, 1))
    d = solve_dirac(v, complex(x, y), Grid(1.0, 16)).jform_defect()
    eig = np.linalg.eigvalsh(d)
    assert eig.min() > -1e-10 * max(1.0, np.abs(eig).max())


def test_beta_gamma_zero():
    beta, gamma = beta_gamma(Potential.zero(2, 1), Grid(1.0, 8))
    np.testing.assert_array_equal(beta.values, np.broadcast_to(np.eye(3)[:2], beta.values.shape))
    np.testing.assert_array_equal(gamma.values, np.broadcast_to(np.eye(3)[2:], gamma.values.shape))


def test_beta_gamma_unit_closed_form():
    g = Grid(2.0, 1024)
    beta, gamma = beta_gamma(Potential.constant(1.0), g)
    b, c = constant_beta_gamma(g.x)
    np.testing.assert_allclose(beta.values, b, atol=1e-6)
    np.testing.assert_allclose(gamma.values, c, atol=1e-6)


@pytest.mark.parametrize("name", list(suite()))
def test_jrelations_suite(name):
    beta, gamma = beta_gamma(suite()[name], Grid(2.0, 512))
    res = jrelation_residuals(beta, gamma)
    assert max(r.max() for r in res.values()) <= 1e-8


@given(c=st.lists(cplx, min_size=2, max_size=2))
@settings(max_examples=20, deadline=None)
def test_jrelations_property(c):
    beta, gamma = beta_gamma(Potential.constant(np.array([c])), Grid(0.5, 16))
    res = jrelation_residuals(beta, gamma)
    scale = 1 + np.abs(beta.values).max() ** 2
    assert max(r.max() for r in res.values()) <= 1e-12 * scale


def test_potential_from_trivial_pair():
    g = Grid(1.0, 8)
    beta, gamma = beta_gamma(Potential.zero(1, 2), g)
    assert np.abs(potential_from_beta_gamma(beta, gamma).values).max() == 0


def test_potential_from_unit_pair():
    g = Grid(2.0, 512)
    v = potential_from_beta_gamma(*beta_gamma(Potential.constant(1.0), g))
    np.testing.assert_allclose(v.values, 1.0, atol=1e-4)


def test_potential_from_smooth_pair():
    g = Grid(2.0, 1024)
    v = smooth_12()
    vhat = potential_from_beta_gamma(*beta_gamma(v, g))
    assert np.abs(vhat.values - v(g.x)).max() <= 1e-3


def test_potential_grid_mismatch():
    beta, _ = beta_gamma(Potential.zero(1, 1), Grid(1.0, 8))
    _, gamma = beta_gamma(Potential.zero(1, 1), Grid(1.0, 16))
    with pytest.raises(InvalidInputError):
        potential_from_beta_gamma(beta, gamma)


def test_schur_trivial_and_unit():
    _, gamma = beta_gamma(Potential.zero(1, 1), Grid(1.0, 8))
    assert np.abs(schur_coefficient(gamma).values).max() == 0
    g = Grid(2.0, 512)
    _, gamma = beta_gamma(Potential.constant(1.0), g)
    np.testing.assert_allclose(schur_coefficient(gamma).values[:, 0, 0], -1j * np.tanh(g.x), atol=1e-10)


@given(c=st.lists(cplx, min_size=2, max_size=2))
@settings(max_examples=20, deadline=None)
def test_schur_is_contraction(c):
    _, gamma = beta_gamma(Potential.constant(np.array(c).reshape(2, 1)), Grid(1.0, 16))
    assert np.linalg.norm(schur_coefficient(gamma).values, 2, axis=(1, 2)).max() < 1


def test_schur_errors_carry_index():
    g = Grid(1.0, 2)
    vals = np.array([[[0, 1]], [[0, 0]], [[0, 1]]], dtype=complex)
    with pytest.raises(SingularityError) as exc:
        schur_coefficient(MatrixField(g, vals))
    assert exc.value.index == 1
    vals = np.array([[[0, 1]], [[0, 1]], [[2, 1]]], dtype=complex)
    with pytest.raises(ContractionError) as exc:
        schur_coefficient(MatrixField(g, vals))
    assert exc.value.index == 2


def test_dimensions_of_solution():
    sol = solve_dirac(Potential.zero(2, 3), 1j, Grid(1.0, 4))
    assert sol.dims == Dimensions(2, 3) and sol.values.shape == (5, 5, 5)
