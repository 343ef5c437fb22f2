"""Acceptance criteria 1-11 at their stated tolerances.

Each test records a PASS/FAIL line that the terminal summary prints under
"acceptance criteria".  Criterion 7 is checked literally and fails: see the
sign-corrected companion test for the limit that actually holds.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import record, suite
from diracweyl.asymptotics import RaySampling, admissibility_check, borg_marchenko_check, high_energy_check
from diracweyl.dirac_core import beta_gamma, jrelation_residuals, solve_dirac
from diracweyl.errors import NonExpansiveError
from diracweyl.fields import Dimensions, Grid, MatrixField, Potential
from diracweyl.fileio import read_weyl_samples
from diracweyl.inverse import InversionConfig, phi1_from_weyl, potential_from_weyl, recover_beta
from diracweyl.snode import (check_operator_identity, factor_S_inverse, fundamental_from_node, gamma_from_node,
                             make_node, phi1_from_potential)
from diracweyl.weyl_forward import WeylSampleSet, weyl_callable, weyl_function, weyl_function_batch
from oracles import constant_beta_gamma, constant_propagator

NONZERO = ["const", "const12", "smooth12", "smooth21"]


def _sup(a) -> float:
    return float(np.linalg.norm(np.asarray(a), 2, axis=(-2, -1)).max())


def _h(a):
    return np.conj(np.swapaxes(a, -1, -2))


def test_criterion_1_zero_potential():
    v = Potential.zero(1, 1)
    grid = Grid(1.0, 256)
    start = time.perf_counter()
    phi, _, _ = weyl_function_batch(v, np.linspace(-10, 10, 41) + 1j)
    res = potential_from_weyl(weyl_callable(v), InversionConfig(grid))
    node = make_node(res.Phi1)
    E = factor_S_inverse(node.S, grid, 1)
    elapsed = time.perf_counter() - start
    errs = {"phi": np.abs(phi).max(), "v_hat": np.abs(res.v.values).max(),
            "S": np.abs(node.S - np.eye(256)).max(), "E": np.abs(E.matrix - np.eye(256)).max()}
    ok = max(errs.values()) <= 1e-12 and elapsed < 1.0
    record(1, ok, f"max deviation {max(errs.values()):.1e} (<= 1e-12), runtime {elapsed:.2f} s (< 1 s)")
    assert ok, (errs, elapsed)


def test_criterion_2_constant_oracle():
    v = Potential.constant(1.0)
    grid = Grid(2.0, 1024)
    err_u = 0.0
    for z in (0.0, 1j, 2 + 1j, -1 + 0.5j):
        u = solve_dirac(v, z, grid).values
        ref = np.array([constant_propagator(1.0, z, x) for x in grid.x])
        err_u = max(err_u, np.abs(u - ref).max())
    beta, gamma = beta_gamma(v, grid)
    b, g = constant_beta_gamma(grid.x)
    err_bg = max(np.abs(beta.values - b).max(), np.abs(gamma.values - g).max())
    ok = err_u <= 1e-6 and err_bg <= 1e-6
    record(2, ok, f"propagator error {err_u:.1e}, beta/gamma error {err_bg:.1e} (<= 1e-6)")
    assert ok


def _node_relations(v, grid):
    Phi1, E = phi1_from_potential(v, grid)
    node = make_node(Phi1)
    beta = recover_beta(node, E)
    gamma = gamma_from_node(node, E)
    j = node.dims.j
    b, g = beta.values, gamma.values
    return {
        "beta' j beta*": _sup(beta.derivative().values @ j @ _h(b)),
        "gamma' j gamma*": _sup(gamma.derivative().values @ j @ _h(g)),
        "gamma j beta*": _sup(g @ j @ _h(b)),
        "gamma j gamma* + I": _sup(g @ j @ _h(g) + np.eye(g.shape[1])),
    }


@pytest.mark.parametrize("name", list(suite()))
def test_criterion_3_j_geometry(name):
    v = suite()[name]
    res = {}
    for n in (256, 512):
        grid = Grid(2.0, n)
        forward = {k: float(r.max()) for k, r in jrelation_residuals(*beta_gamma(v, grid)).items()}
        res[n] = {**forward, **_node_relations(v, grid)}
    bound_ok = all(r <= 5 * Grid(2.0, n).h for n in res for r in res[n].values())
    halving_ok = all(res[512][k] <= 0.6 * res[256][k] for k in res[256] if res[256][k] > 1e-12)
    worst = max(res[512].values())
    record(3, bound_ok and halving_ok,
           f"{name}: max residual {worst:.1e} at n=512 (<= 5h = {5 * 2 / 512:.3g}), halving {halving_ok}")
    assert bound_ok and halving_ok, res


def test_criterion_4_operator_identity():
    orders = {}
    for name in ("const", "smooth12"):
        ns = np.array([128, 256, 512])
        r = []
        for n in ns:
            Phi1, _ = phi1_from_potential(suite()[name], Grid(2.0, int(n)))
            r.append(check_operator_identity(make_node(Phi1)))
        hs = 2.0 / ns
        order = np.polyfit(np.log(hs), np.log(r), 1)[0]
        C = max(np.array(r) / hs)
        orders[name] = (order, C, r)
    ok = all(o >= 0.9 for o, _, _ in orders.values())
    record(4, ok, ", ".join(f"{k}: order {o:.2f}, residuals {r[0]:.1e}..{r[-1]:.1e}, C {C:.2g}"
                            for k, (o, C, r) in orders.items()))
    assert ok, orders


@pytest.mark.parametrize("name", NONZERO)
def test_criterion_5_representation(name):
    v = suite()[name]
    grid = Grid(1.0, 1024)
    Phi1, _ = phi1_from_potential(v, grid)
    node = make_node(Phi1)
    u0 = MatrixField(grid, solve_dirac(v, 0.0, grid).values)
    errs = [np.linalg.norm(fundamental_from_node(node, u0, 1.0, z) - solve_dirac(v, z, grid).at(1.0), 2)
            for z in (1j, 2j, 1 + 1j)]
    ok = max(errs) <= 1e-3
    record(5, ok, f"{name}: max error {max(errs):.1e} (<= 1e-3)")
    assert ok, errs


def test_criterion_6_round_trip(smooth_roundtrip):
    v, grid, res = smooth_roundtrip
    mask = grid.x <= 1.8 + 1e-12
    err = _sup(res.v.values[mask] - v(grid.x[mask]))
    disc = res.diagnostics["route_discrepancy"]
    t = res.diagnostics["runtime"]
    ok = err <= 1e-2 and disc <= 1e-3 and t < 120
    record(6, ok, f"sup error {err:.1e} (<= 1e-2), route discrepancy {disc:.1e} (<= 1e-3), runtime {t:.0f} s")
    assert ok


def _leading_terms(name):
    v = suite()[name]
    v0 = v(np.array([0.0]))[0]
    lead = 2j * 64 * weyl_function(v, 64j).value
    return v0, lead


@pytest.mark.parametrize("name", NONZERO)
def test_criterion_7_high_energy(name):
    v0, lead = _leading_terms(name)
    literal = np.linalg.norm(lead - v0.conj().T, 2)
    lead_ok = literal <= 0.1 * np.linalg.norm(v0, 2)
    v = suite()[name]
    l = 1 / 16
    Phi1, _ = phi1_from_potential(v, Grid(l, 512))
    he = high_energy_check(weyl_callable(v), Phi1, l, (5, 10, 20, 40, 64))
    record(7, lead_ok and he["bounded"],
           f"{name}: ||2iy phi(iy) - v(0)*|| = {literal:.3g} vs bound {0.1 * np.linalg.norm(v0, 2):.3g}, "
           f"r(y) growth {he['max_monotone_growth']:.2f} (<= 2)")
    assert he["bounded"]
    assert lead_ok, "2iy phi(iy) tends to -v(0)*, not v(0)*"


@pytest.mark.parametrize("name", NONZERO)
def test_criterion_7_companion_sign(name):
    v0, lead = _leading_terms(name)
    assert np.linalg.norm(lead + v0.conj().T, 2) <= 0.1 * np.linalg.norm(v0, 2)


def test_criterion_8_admissibility(smooth_roundtrip):
    lengths = [0.5, 1.0, 1.5, 2.0]
    worst = np.inf
    for name in NONZERO:
        Phi1, _ = phi1_from_potential(suite()[name], Grid(2.0, 256))
        rep = admissibility_check(Phi1, lengths)
        assert rep["admissible"], (name, rep)
        worst = min(worst, min(rep["min_eigenvalue"]))
    inverted = min(smooth_roundtrip[2].diagnostics["min_eigenvalue"].values())
    g = Grid(1.0, 256)
    bad = admissibility_check(MatrixField(g, (10j * g.x)[:, None, None]), [0.25, 0.5, 0.75, 1.0])
    ok = worst > 0 and inverted > 0 and bad["verdict"].startswith("inadmissible") \
        and bad["crossing_length"] is not None
    record(8, ok, f"genuine min eigenvalue {min(worst, inverted):.3g} > 0; "
                  f"10ix crossing at l = {bad['crossing_length']:.4g}, verdict '{bad['verdict']}'")
    assert ok


def test_criterion_9_borg_marchenko():
    va = Potential.from_entries([[lambda x: 0.5 * np.cos(x)]])
    vb = Potential.from_entries([[lambda x: 0.5 * np.cos(x) + (x > 1)]])
    cfg = InversionConfig(Grid(1.0, 128), check_eta=None)
    rep = borg_marchenko_check(weyl_callable(va), weyl_callable(vb), RaySampling(), reconstruct=cfg)
    ra, rb = rep["potentials"]
    mask = ra.x <= 0.9 + 1e-12
    agree = _sup(ra.values[mask] - rb.values[mask])
    truth = _sup(ra.values[mask] - va(ra.x[mask]))
    ok = 0.8 <= rep["r_hat"] <= 1.2 and agree <= 1e-2 and truth <= 1e-2
    record(9, ok, f"r_hat = {rep['r_hat']:.3f} (in [0.8, 1.2]), reconstructions agree to {agree:.1e} "
                  f"on [0, 0.9], error vs truth {truth:.1e}")
    assert ok


def test_criterion_10_nonexpansive(tmp_path):
    z = np.concatenate([np.linspace(-20, 20, 81) + 0.5j, np.linspace(-20, 20, 81) + 1j, 1j * np.geomspace(0.5, 64, 8)])
    worst = 0.0
    for name, v in suite().items():
        worst = max(worst, _sup(weyl_function_batch(v, z)[0]))
    ok = worst <= 1 + 1e-8
    rejected = 0
    p = tmp_path / "bad.txt"
    p.write_text("# m1=1 m2=1 provenance=test layout=re,im\n0 1 1.00000002 0\n")
    with pytest.raises(NonExpansiveError):
        read_weyl_samples(p)
    rejected += 1
    with pytest.raises(NonExpansiveError):
        WeylSampleSet([1j], [[1.5]], Dimensions(1, 1))
    rejected += 1
    with pytest.raises(NonExpansiveError):
        phi1_from_weyl(lambda zz: np.full((len(zz), 1, 1), 1.1 + 0j), InversionConfig(Grid(1.0, 16)))
    rejected += 1
    record(10, ok, f"max ||phi|| over the suite {worst:.12f} (<= 1 + 1e-8); {rejected} violations rejected")
    assert ok


def test_criterion_11_eta_independence(smooth_roundtrip):
    d12 = smooth_roundtrip[2].diagnostics["eta_consistency"]
    v = suite()["smooth21"]
    cfg = InversionConfig(Grid(2.0, 256))
    a = phi1_from_weyl(weyl_callable(v), cfg)
    b = phi1_from_weyl(weyl_callable(v), replace(cfg, eta=2.0, n_xi=None))
    d21 = _sup(a.values - b.values)
    ok = d12 <= 1e-3 and d21 <= 1e-3
    record(11, ok, f"sup |Phi1(eta=1) - Phi1(eta=2)|: smooth 1x2 {d12:.1e}, smooth 2x1 {d21:.1e} (<= 1e-3)")
    assert ok
