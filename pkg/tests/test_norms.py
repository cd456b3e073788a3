from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from hortrace.domains import Box, SupportError, bump, modulated_bump, time_product
from hortrace.fieldspec import d_dt, lift, parse_field
from hortrace.flows import FlowSolverConfig
from hortrace.norms import (NormParams, TimeSlicing, besov_term, classical_modulus, collar_cutoff,
                            dyadic_panels, flow_besov_norm, flow_besov_terms, flow_modulus, flow_modulus_profile,
                            hardy_littlewood_check, lp_norm, shift_directions, shift_norm,
                            sliced_sobolev_terms, sobolev_norm, sobolev_terms)

SQUARE = Box.cube(-1, 1, 2)
# ||bump(0, 0.3)(. + 0.1 e1) - bump||_L2 on a 2000^2 midpoint grid
SHIFT_ORACLE = 0.16300290629916386


def test_lp_norm_against_quadrature():
    f = bump([0.0], 1.0)
    exact = np.sqrt(quad(lambda x: f([x]) ** 2, -1, 1, epsabs=1e-14)[0])
    assert exact == pytest.approx(0.99165559188295, rel=1e-12)
    assert lp_norm(f, Box.cube(-1, 1, 1), 2.0, 257) == pytest.approx(exact, rel=1e-12)


def test_lp_norm_disjoint_support_is_zero():
    assert lp_norm(bump([3.0, 3.0], 0.5), SQUARE, 2.0, 16) == 0.0


def test_shift_norm_against_fine_grid():
    psi = bump([0.0, 0.0], 0.3)
    assert shift_norm(psi, np.array([0.1, 0.0]), SQUARE, 2.0, 40) == pytest.approx(SHIFT_ORACLE, rel=1e-5)


@pytest.mark.parametrize("method", ["dopri5", "auto"])
def test_translation_flow_modulus_is_shift_norm(method):
    psi = bump([0.0, 0.0], 0.3)
    Z = parse_field(["1", "0"])
    params = NormParams(grid_res=40, tau_samples=4)
    val = flow_modulus(0.1, psi, Z, None, SQUARE, 2.0, params, FlowSolverConfig(method=method))
    assert val == pytest.approx(SHIFT_ORACLE, rel=1e-5)


def test_shift_norm_converges_with_grid():
    psi = modulated_bump([0.1, 0.0], 0.25)
    s = np.array([0.03, -0.02])
    coarse, fine = shift_norm(psi, s, SQUARE, 2.0, 16), shift_norm(psi, s, SQUARE, 2.0, 48)
    assert coarse == pytest.approx(fine, rel=1e-3)


def test_classical_modulus_against_sampled_directions():
    # brute force: 10^4 directions, each shift norm on the same grid
    psi = modulated_bump([0.0, 0.0], 0.3, axis=1)
    t = 0.05
    ang = np.linspace(0, 2 * np.pi, 10_000, endpoint=False)
    brute = max(shift_norm(psi, t * np.array([np.cos(a), np.sin(a)]), SQUARE, 2.0, 12) for a in ang[::50])
    got = classical_modulus(t, psi, SQUARE, 2.0, 12)
    assert float(f"{got:.2g}") == float(f"{brute:.2g}")
    assert classical_modulus(0.0, psi, SQUARE, 2.0) == 0.0


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_shift_directions_unit(n):
    U = shift_directions(n)
    assert U.shape[1] == n and np.allclose(np.linalg.norm(U, axis=1), 1.0)


def test_heisenberg_modulus_against_closed_form_flow(heisenberg):
    # e^{tau X1} x = (x1 + tau, x2, x3 - tau x2 / 2), sampled directly on a fine grid
    psi = modulated_bump([0.05, 0.0, 0.0], 0.3, axis=2)
    V = Box.cube(-1, 1, 3)
    params = NormParams(grid_res=16, tau_samples=2)
    t = 0.08
    got = flow_modulus(t, psi, heisenberg[0], None, V, 2.0, params)
    pts, w = psi.support.expand(0.1).midpoints(90)
    brute = 0.0
    for tau in (t / 2, t, -t / 2, -t):
        img = pts + np.column_stack([np.full(len(pts), tau), np.zeros(len(pts)), -tau * pts[:, 1] / 2])
        brute = max(brute, np.sqrt(np.sum((psi(img) - psi(pts)) ** 2) * w))
    assert got == pytest.approx(brute, rel=1e-3)


def test_support_outside_V1_rejected(heisenberg):
    psi = bump([0.5, 0.0, 0.0], 0.3)
    with pytest.raises(SupportError):
        flow_modulus(0.1, psi, heisenberg[0], Box.cube(-0.6, 0.6, 3), Box.cube(-1, 1, 3), 2.0)


def test_collar_cutoff():
    B = Box.cube(-0.5, 0.5, 2)
    chi = collar_cutoff(B, np.full(2, 0.1))
    vals = chi(np.array([[0.0, 0.0], [0.5, 0.5], [0.55, 0.0], [0.6, 0.0], [0.7, 0.3]]))
    assert vals[0] == 1.0 and vals[1] == 1.0 and vals[3] == 0.0 and vals[4] == 0.0
    assert 0.0 < vals[2] < 1.0 and vals[2] == pytest.approx(0.5)


@settings(max_examples=10, deadline=None)
@given(x=st.floats(-0.2, 0.2), s=st.floats(0.05, 0.25))
def test_modulus_profile_nondecreasing(x, s):
    psi = bump([x, 0.0], s)
    params = NormParams(t_nodes=6, tau_samples=2, t_min_exponent=6, grid_res=10)
    prof = flow_modulus_profile(psi, parse_field(["1", "x1"]), None, SQUARE, params,
                                FlowSolverConfig(method="auto"))
    assert np.all(np.diff(prof) >= 0)


def test_besov_term_power_law():
    # omega = t^a gives {int t^((a - theta) p) dt/t}^(1/p) in closed form
    params = NormParams(p=3.0, t_nodes=400, t_min_exponent=20)
    nodes = params.nodes()
    a, theta, p = 1.0, params.theta, params.p
    k = (a - theta) * p
    exact = ((nodes[-1] ** k - nodes[0] ** k) / k) ** (1 / p)
    assert besov_term(nodes ** a, nodes, theta, p) == pytest.approx(exact, rel=1e-4)


def test_besov_homogeneous_and_lp_included():
    psi = bump([0.0, 0.0], 0.3)
    params = NormParams(t_nodes=8, tau_samples=2, t_min_exponent=8, grid_res=12)
    fields = [parse_field(["1", "0"]), parse_field(["0", "1"])]
    a = flow_besov_terms(psi, fields, None, SQUARE, params, FlowSolverConfig(method="auto"))
    b = flow_besov_terms(psi.scaled(7.0), fields, None, SQUARE, params, FlowSolverConfig(method="auto"))
    assert b.value == pytest.approx(7 * a.value, rel=1e-12)
    assert a.value == pytest.approx(a.lp + sum(a.terms))
    # symmetric bump: both axes give the same term
    assert a.terms[0] == pytest.approx(a.terms[1], rel=1e-12)


def test_norm_params():
    params = NormParams(p=4.0, delta=0.5, t_nodes=10, t_min_exponent=4)
    assert params.theta == 0.75 and params.sigma == 0.375
    assert params.nodes()[0] == pytest.approx(0.5 / 16) and params.nodes()[-1] == pytest.approx(0.5)
    assert params.refined().t_nodes == 20 and params.refined().tau_samples == 16
    with pytest.raises(ValueError):
        NormParams(p=1.0)


def test_sobolev_exact_gradient_matches_finite_difference(heisenberg):
    phi = modulated_bump([0.0, 0.0, 0.0], 0.3)
    U = Box.cube(-0.5, 0.5, 3)
    a = sobolev_terms(phi, heisenberg, U, 2.0, 16)
    b = sobolev_terms(phi, heisenberg, U, 2.0, 16, finite_difference=True, step=1e-5)
    assert np.allclose(a.terms, b.terms, rtol=1e-6)


def test_sobolev_translation_derivative_closed_form():
    # ||d/dx bump||_2 for the 1-d bump against quadrature
    f = bump([0.0], 0.5)
    U = Box.cube(-1, 1, 1)
    exact = np.sqrt(quad(lambda x: f.gradient([[x]])[0, 0] ** 2, -0.5, 0.5, epsabs=1e-13)[0])
    got = sobolev_terms(f, [parse_field(["1"])], U, 2.0, 400).terms[0]
    assert got == pytest.approx(exact, rel=1e-6)


def test_sliced_sobolev_matches_full_grid():
    psi = bump([0.0, 0.0], 0.3)
    rho = bump([0.0], 0.2)
    phi = time_product(psi, rho)
    beta = [lift(parse_field(["1", "0"])), lift(parse_field(["0", "x1"])), d_dt(3)]
    nodes, weights = dyadic_panels(0.2, 0.2 / 64, per_panel=6)
    slicing = TimeSlicing(nodes, weights, tuple(psi.support for _ in nodes))
    sliced = sliced_sobolev_terms(phi, beta, slicing, 2.0, grid_res=24)
    full = sobolev_terms(phi, beta, phi.support, 2.0, grid_res=48)
    assert sliced.value == pytest.approx(full.value, rel=2e-3)


def test_dyadic_panels_integrate_polynomials():
    nodes, weights = dyadic_panels(0.5, 0.01, per_panel=3)
    assert np.sum(weights) == pytest.approx(1.0)
    assert np.sum(weights * nodes ** 4) == pytest.approx(2 * 0.5 ** 5 / 5)
    half, _ = dyadic_panels(0.5, 0.01, symmetric=False)
    assert np.all(half > 0)
    with pytest.raises(ValueError):
        dyadic_panels(0.5, 1.0)


@pytest.mark.parametrize("a", [0.0, 0.5, 1.0, 2.0])
def test_hardy_power_law(a):
    # average of t^a over [0, t] is t^a / (a + 1)
    t = np.linspace(0, 1, 20001)[1:]
    res = hardy_littlewood_check(t ** a, 2.0, t)
    assert res.ratio == pytest.approx(1 / (a + 1), rel=1e-3)


@settings(max_examples=40, deadline=None)
@given(h=st.lists(st.floats(0, 10), min_size=5, max_size=60), q=st.floats(1.1, 6))
def test_hardy_bound(h, q):
    res = hardy_littlewood_check(np.array(h), q)
    assert res.ratio <= q / (q - 1) + 1e-9


def test_hardy_input_errors():
    with pytest.raises(ValueError):
        hardy_littlewood_check([1.0, -1.0], 2.0)
    with pytest.raises(ValueError):
        hardy_littlewood_check([1.0, 1.0], 1.0)
    assert hardy_littlewood_check(np.zeros(4), 2.0).ratio == 0.0


@pytest.fixture(scope="module")
def tiny_setup():
    from hortrace.domains import test_corpus
    from hortrace.harness import EXPERIMENT_FLOWS, slice_fields
    from hortrace.manifest import load_manifest

    man = load_manifest(Path(__file__).parent / "data" / "tiny.cfg")
    params = NormParams(grid_res=8, t_nodes=6, tau_samples=2, t_min_exponent=6)
    return man.domain, slice_fields(man), test_corpus(man.domain, 6), params, EXPERIMENT_FLOWS


def test_triangle_inequality_on_corpus_pairs(tiny_setup):
    import itertools

    d, Y, funcs, params, cfg = tiny_setup
    besov = [flow_besov_norm(f, Y, d.V1, d.V, params, cfg) for f in funcs]
    sob = [sobolev_norm(f, Y, d.V, 2.0, 12) for f in funcs]
    pairs = list(itertools.combinations(range(len(funcs)), 2))
    for i, j in pairs:
        h = funcs[i] + funcs[j]
        assert flow_besov_norm(h, Y, d.V1, d.V, params, cfg) <= besov[i] + besov[j] + 1e-9
        assert sobolev_norm(h, Y, d.V, 2.0, 12) <= sob[i] + sob[j] + 1e-9


@pytest.mark.parametrize("member", [0, 3, 5])
def test_flow_modulus_bounded_by_lp_norm(tiny_setup, member):
    d, Y, funcs, params, cfg = tiny_setup
    psi = funcs[member]
    lp = lp_norm(psi, d.V, 2.0, params.grid_res)
    lip = 0.5  # Lipschitz constant of X1 = (1, 0, -x2/2) and X2 = (0, 1, x1/2)
    for t in params.nodes():
        for Z in Y:
            w = flow_modulus(t, psi, Z, d.V1, d.V, 2.0, params, cfg)
            assert w <= 2 * lp * (1 + np.exp(t * lip))
