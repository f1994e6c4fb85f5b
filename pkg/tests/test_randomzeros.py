import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from bergman_lab.envelopes import oracle
from bergman_lab.geometry import build_measure, build_set
from bergman_lab.orthogonalization import orthonormal_basis
from bergman_lab.polynomials import ComplexLine, Poly, eval_poly
from bergman_lab.randomzeros import (CoefficientLaw, DiscreteMeasure, deviation_curve,
                                     dist_minus2, make_dictionary, make_law, potential_l1,
                                     reference_measure, run_ensemble, sample_poly, trial_rng,
                                     wilson_interval, zero_measure)

GAUSS = make_law("complex_gaussian")
PARETO = make_law({"tag": "pareto_h1", "r0": 1.0})
TORUS_LINE = ComplexLine((0, 2), (1, 0))


def unit_roots(k):
    c = np.zeros(k + 1, dtype=complex)
    c[0], c[-1] = -1, 1
    return Poly(1, k, c)


# --- laws -----------------------------------------------------------------

def test_pareto_tail_monte_carlo():
    a = PARETO.draw(trial_rng(99, 0), 10 ** 6)
    for r in (2, 4, 8):
        emp = float(np.mean(np.abs(a) > r))
        assert emp == pytest.approx(PARETO.tail_constant / r ** 2, rel=0.05)


@pytest.mark.parametrize("law", [GAUSS, PARETO, make_law({"tag": "complex_gaussian", "sigma": 2.0})])
def test_density_is_a_probability_with_matching_tail(law):
    radial = lambda r: 2 * math.pi * r * float(law.density(r))
    brk = [law.r0] if law.tag == "pareto_h1" else []
    total = integrate.quad(radial, 0, np.inf, points=None)[0] if not brk else (
        integrate.quad(radial, 0, brk[0])[0] + integrate.quad(radial, brk[0], np.inf)[0])
    assert total == pytest.approx(1, abs=1e-9)
    for r in (0.5, 2.0, 5.0):
        tail = integrate.quad(radial, r, np.inf)[0]
        assert tail == pytest.approx(law.tail(r), rel=1e-7, abs=1e-12)
        assert tail <= law.tail_constant / r ** 2 * (1 + 1e-12)


@given(st.floats(1.0, 1e4), st.floats(0, 2 * math.pi))
def test_pareto_density_below_inverse_cube(r, th):
    z = r * np.exp(1j * th)
    assert PARETO.density(z) <= r ** -3 * (1 + 1e-12)


def test_gaussian_inverse_cube_certificate():
    r0 = GAUSS.h1_radius
    r = np.linspace(max(r0, 1e-3), 50, 20001)
    assert np.all(GAUSS.density(r) <= r ** -3.0)


def test_pareto_cut_must_be_admissible():
    with pytest.raises(ValueError):
        CoefficientLaw("pareto_h1", r0=7.0)
    with pytest.raises(ValueError):
        make_law("cauchy")


def test_gaussian_moments():
    a = GAUSS.draw(trial_rng(5, 1), 200000)
    assert np.mean(np.abs(a) ** 2) == pytest.approx(1, rel=0.01)
    assert abs(np.mean(a)) < 0.01
    assert abs(np.mean(a ** 2)) < 0.01  # circular symmetry


# --- sampling -------------------------------------------------------------

def test_degree_one_on_circle_uses_raw_coefficients(haar_circle):
    B = orthonormal_basis(haar_circle, 1, 64)
    p = sample_poly(B, GAUSS, seed=3, trial_id=4)
    ref = GAUSS.draw(trial_rng(3, 4, 1), 2)
    np.testing.assert_allclose(p.coeffs, ref, atol=1e-15)


def test_sampling_is_bit_identical(half_interval):
    B = orthonormal_basis(half_interval, 20, 256)
    a = sample_poly(B, PARETO, 11, 2).coeffs
    b = sample_poly(B, PARETO, 11, 2).coeffs
    assert a.tobytes() == b.tobytes()
    assert sample_poly(B, PARETO, 11, 3).coeffs.tobytes() != a.tobytes()


def test_sampled_polynomial_is_combination_of_basis(half_interval):
    B = orthonormal_basis(half_interval, 6, 256)
    p = sample_poly(B, GAUSS, 1, 0)
    alpha = GAUSS.draw(trial_rng(1, 0, 6), B.dim)
    x = np.linspace(-1, 1, 7)
    basis_vals = np.stack([eval_poly(Poly(1, 6, B.t_double[j]), x) for j in range(B.dim)], axis=1)
    np.testing.assert_allclose(p(x), basis_vals @ alpha, rtol=1e-10)


# --- zero measures and references ----------------------------------------

def test_zero_measure_of_unit_roots():
    zm = zero_measure(unit_roots(16))
    assert zm.atom_count == 16 and zm.conserved
    np.testing.assert_allclose(zm.weights, 1 / 16)
    assert zm.mass == pytest.approx(1)


def test_degree_drop_is_recorded():
    zm = zero_measure(Poly(1, 4, [1, 1, 0, 0, 0]))
    assert zm.degree_drop == 3 and not zm.conserved and zm.atom_count == 1


def test_line_zero_measure_lives_on_the_parameter(haar_torus):
    B = orthonormal_basis(haar_torus, 8, 64)
    p = sample_poly(B, GAUSS, 0, 0)
    zm = zero_measure(p, TORUS_LINE)
    assert zm.atom_count == 8
    vals = p(TORUS_LINE.point(zm.atoms))
    scale = np.max(np.abs(p.coeffs)) * 2.0 ** 8 * 8
    assert np.max(np.abs(vals)) < 1e-8 * scale


def test_circle_reference_is_haar():
    ref = reference_measure(oracle("circle"))
    np.testing.assert_allclose(np.abs(ref.atoms), 1)
    assert ref.mass == pytest.approx(1)
    assert abs(np.sum(ref.weights * ref.atoms ** 3)) < 1e-12


def test_interval_reference_is_arcsine():
    ref = reference_measure(oracle("interval"))
    assert np.sum(ref.weights * ref.atoms.real ** 2) == pytest.approx(0.5, abs=1e-12)
    assert np.sum(ref.weights * ref.atoms.real ** 4) == pytest.approx(3 / 8, abs=1e-12)


def test_torus_line_reference_sits_on_radius_two():
    ref = reference_measure(oracle("torus2"), TORUS_LINE)
    assert ref.mass == pytest.approx(1)
    assert np.all(np.abs(np.abs(ref.atoms) - 2) < 0.02)
    assert abs(np.sum(ref.weights * ref.atoms)) < 1e-3  # rotation invariant


def test_finite_difference_reference_matches_circle():
    from bergman_lab.randomzeros import laplacian_reference

    fd = laplacian_reference(oracle("circle"), None)
    exact = reference_measure(oracle("circle"))
    assert dist_minus2(fd, exact) < 5e-3


# --- dictionary distance ---------------------------------------------------

def test_dictionary_size_and_prefix_order():
    dic = make_dictionary()
    assert len(dic) >= 64
    head = dic.head(64)
    np.testing.assert_array_equal(head.centers, dic.centers[:64])


def test_dictionary_members_have_unit_c2_bound():
    dic = make_dictionary()
    h = 1e-3
    for i in range(0, len(dic), 37):
        c, s = dic.centers[i], dic.scales[i]
        x = c + np.linspace(-3 * s, 3 * s, 301)
        for d in (1, 1j):
            f = lambda t: dic(t)[i]
            second = (f(x + h * d) - 2 * f(x) + f(x - h * d)) / h ** 2
            first = (f(x + h * d) - f(x - h * d)) / (2 * h)
            assert np.max(np.abs(f(x))) <= 1 and np.max(np.abs(first)) <= 1
            assert np.max(np.abs(second)) <= 1 + 1e-4


def test_distance_to_itself_is_zero():
    a = reference_measure(oracle("circle"))
    assert dist_minus2(a, a) == 0


def test_shifted_point_mass():
    eps = 0.1
    a = DiscreteMeasure(np.array([0j]), np.array([1.0]))
    b = DiscreteMeasure(np.array([eps + 0j]), np.array([1.0]))
    assert 0.05 * eps <= dist_minus2(a, b) <= eps


def test_haar_against_roots_of_unity():
    k = 64
    roots = DiscreteMeasure(np.exp(2j * np.pi * np.arange(k) / k), np.full(k, 1 / k))
    assert dist_minus2(reference_measure(oracle("circle")), roots) <= 1e-3


@given(st.integers(0, 2 ** 31), st.integers(8, 200))
def test_enlarging_the_dictionary_never_lowers_distance(seed, n):
    rng = np.random.default_rng(seed)
    a = DiscreteMeasure(rng.standard_normal(5) + 1j * rng.standard_normal(5), np.full(5, 0.2))
    b = reference_measure(oracle("circle"), n_atoms=256)
    dic = make_dictionary()
    n = min(n, len(dic))
    assert dist_minus2(a, b, dic.head(n)) <= dist_minus2(a, b, dic.head(min(len(dic), n + 40))) + 1e-15


# --- potential proxy -------------------------------------------------------

def test_potential_of_monomial_is_disk_integral():
    # |log|z|| integrated over the unit disk is pi/2; the window is the radius-2 disk
    for k in (8, 64):
        c = np.zeros(k + 1, dtype=complex)
        c[-1] = 1
        assert potential_l1(Poly(1, k, c), oracle("circle")) == pytest.approx((math.pi / 2) / (4 * math.pi), rel=0.02)


def test_potential_of_unit_roots_decreases():
    vals = []
    for k in (16, 32, 64, 128):
        p = unit_roots(k)
        v = potential_l1(p, oracle("circle"), zeros=zero_measure(p).atoms)
        assert v <= math.log(k) / k
        vals.append(v)
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_excision_is_recorded():
    p = unit_roots(16)
    zs = zero_measure(p).atoms
    res = potential_l1(p, oracle("circle"), zeros=zs, excision=1e-2, detail=True)
    assert res.excised_area > 0
    assert res.excised_area <= 16 * math.pi * 1e-4 * 1.5


def test_zero_polynomial_rejected():
    with pytest.raises(ValueError):
        potential_l1(Poly(1, 3, np.zeros(4)), oracle("circle"))


def test_random_circle_median(haar_circle):
    k = 128
    B = orthonormal_basis(haar_circle, k, 64)
    ens = run_ensemble(B, GAUSS, oracle("circle"), 100, seed=17)
    assert ens.median_potential <= 5 * math.log(k) / k
    assert ens.conserved_fraction >= 0.99
    for r in ens.records:
        assert r.dist2_dictionary <= r.potential_l1 * ens.comparison_constant * (1 + 1e-12)


def test_ensembles_are_reproducible(haar_circle):
    B = orthonormal_basis(haar_circle, 16, 64)
    a = run_ensemble(B, GAUSS, oracle("circle"), 6, seed=5)
    b = run_ensemble(B, GAUSS, oracle("circle"), 6, seed=5)
    assert [r.row() for r in a.records] == [r.row() for r in b.records]
    # a split run gives the same records as one run
    c1 = run_ensemble(B, GAUSS, oracle("circle"), 3, seed=5)
    c2 = run_ensemble(B, GAUSS, oracle("circle"), 3, seed=5, trial_offset=3)
    assert [r.row() for r in a.records] == [r.row() for r in c1.records + c2.records]


# --- deviation curves ------------------------------------------------------

@pytest.fixture(scope="module")
def small_ensembles(haar_circle):
    out = {}
    for law in (GAUSS, PARETO):
        out[law.tag] = [run_ensemble(orthonormal_basis(haar_circle, k, 64), law, oracle("circle"), 200, 3)
                        for k in (16, 32)]
    return out


def test_huge_threshold_gives_zero_fractions(small_ensembles):
    curve = deviation_curve(small_ensembles["complex_gaussian"], 1e4)
    assert curve.fractions == [0.0, 0.0]
    assert math.isnan(curve.decay_slope)


def test_heavy_tails_stay_close_to_gaussian(small_ensembles):
    g = deviation_curve(small_ensembles["complex_gaussian"], 20)
    p = deviation_curve(small_ensembles["pareto_h1"], 20)
    for a, b in zip(g.points, p.points):
        assert b.fraction <= 2 * a.fraction + 1e-12
        assert a.lo <= a.fraction <= a.hi


def test_deviation_curve_requires_enough_trials(haar_circle):
    ens = run_ensemble(orthonormal_basis(haar_circle, 8, 64), GAUSS, oracle("circle"), 10, 0)
    with pytest.raises(ValueError):
        deviation_curve([ens], 10)


def test_wilson_interval_covers_the_estimate():
    lo, hi = wilson_interval(5, 100)
    assert lo < 0.05 < hi
    assert wilson_interval(0, 200)[0] == 0
