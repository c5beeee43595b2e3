"""
Inverse lattice theory: A(k0) from asymptotics, Weyl matrices from Green's data,
half-line measures, moments, reconstruction and local agreement.
"""
import math

import numpy as np
import pytest

import config
from errors import (
    ContractionViolated,
    DegenerateMeasure,
    InsufficientDecades,
    RealAxis,
    UsageError,
    ValidationError,
    WeylError,
)
from jacobi_forward import JacobiCoeffs, Side, greens_sample, halfline_m, weyl_m
from jacobi_inverse import (
    UNBOUNDED,
    AgreementMode,
    Case,
    SpectralMeasure,
    agreement_windows,
    estimate_B0,
    extract_A0,
    fit_moments,
    invert_from_greens,
    local_agreement_order,
    matrix_moments,
    measure_from_halfline,
    ray_points,
    reconstruct_coeffs,
    reconstruct_from_moments,
    recover_weyl,
    recover_weyl_case_i,
    recover_weyl_case_ii,
    recover_weyl_case_iii,
    ring_points,
    sample_geometry,
    stabilize_halfline_measure,
)
from matalg import inverse, op_norm

ANGLE = 3 * math.pi / 4


def ray_samples(c, k0=0, lo=10.0, hi=1e5, count=12):
    return [greens_sample(c, z, k0) for z in ray_points(ANGLE, lo, hi, count)]


def ring_samples(c, k0=0, radius=8.0, count=32):
    return [greens_sample(c, z, k0) for z in ring_points(radius, count)]


def modified(c: JacobiCoeffs, k: int, shift) -> JacobiCoeffs:
    A, B = c.to_maps()
    B = dict(B)
    B[k] = B.get(k, np.zeros((c.m, c.m))) + shift
    return JacobiCoeffs.from_maps(A, B, m=c.m)


def test_sample_geometry_classification():
    assert sample_geometry(ray_points(ANGLE, 1, 100, 5)) == "ray"
    assert sample_geometry(ring_points(3.0, 8)) == "ring"
    assert sample_geometry([1j, 2 + 3j, -1 + 0.5j]) == "list"


def test_extract_A0_free():
    A0 = extract_A0(ray_samples(JacobiCoeffs.free(1)))
    assert A0[0, 0] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("symmetrized", [False, True])
def test_extract_A0_matrix(jacobi_2x2, symmetrized):
    A0 = extract_A0(ray_samples(jacobi_2x2), symmetrized=symmetrized)
    assert op_norm(A0 - jacobi_2x2.A_at(0)) <= 1e-6


def test_extract_A0_needs_two_decades(jacobi_2x2):
    with pytest.raises(InsufficientDecades):
        extract_A0(ray_samples(jacobi_2x2, lo=10, hi=50, count=5))


def test_extract_A0_needs_a_ray(jacobi_2x2):
    with pytest.raises(ValidationError):
        extract_A0(ring_samples(jacobi_2x2, count=6))


@pytest.mark.parametrize("case", [Case.I, Case.II])
@pytest.mark.parametrize("z", [0.4 + 1.2j, -1.5 + 0.6j, 6j])
def test_recover_weyl_cases_i_and_ii(jacobi_2x2, case, z):
    s = greens_sample(jacobi_2x2, z, 0)
    exact = weyl_m(jacobi_2x2, z, 0)
    pair = recover_weyl(s, case, jacobi_2x2.A_at(0))
    assert pair.distance(exact) <= 1e-9 * max(1.0, op_norm(exact.M_minus))


def test_recover_weyl_case_iii(jacobi_2x2):
    z = 6j
    s = greens_sample(jacobi_2x2, z, 0)
    pair = recover_weyl_case_iii(s.g0, s.g1, jacobi_2x2.A_at(0), z)
    assert pair.distance(weyl_m(jacobi_2x2, z, 0)) <= 1e-9


def test_recover_weyl_case_iii_needs_contraction():
    eye = np.eye(2)
    with pytest.raises(ContractionViolated):
        recover_weyl_case_iii(0.6j * eye, 0.1j * eye, eye, 1j)
    with pytest.raises(RealAxis):
        recover_weyl_case_iii(0.1j * eye, 0.1j * eye, eye, -5j)


@pytest.mark.parametrize("z", [6j, 10 * np.exp(1j * ANGLE), -3 + 4j])
def test_exact_M_plus_solves_case_iii_equation(jacobi_2x2, z):
    s = greens_sample(jacobi_2x2, z, 0)
    A0 = jacobi_2x2.A_at(0)
    M_plus = weyl_m(jacobi_2x2, z, 0).M_plus
    rhs = A0 @ s.g1 @ A0
    assert op_norm(M_plus + M_plus @ s.g0 @ M_plus - rhs) <= 1e-10 * max(1.0, op_norm(rhs))
    assert op_norm(M_plus) < 1


@pytest.mark.parametrize("geometry", ["ray", "ring"])
def test_three_cases_agree_on_shared_samples(jacobi_2x2, geometry):
    samples = ray_samples(jacobi_2x2) if geometry == "ray" else ring_samples(jacobi_2x2)
    A0 = jacobi_2x2.A_at(0)
    for s in samples:
        first = recover_weyl_case_i(s, A0)
        second = recover_weyl_case_ii(s, A0)
        third = recover_weyl_case_iii(s.g0, s.g1, A0, s.z)
        scale = max(1.0, op_norm(first.M_minus))
        assert first.distance(second) <= 1e-7 * scale
        assert first.distance(third) <= 1e-7 * scale
        assert second.distance(third) <= 1e-7 * scale


def test_estimate_B0_from_minus_limit(jacobi_2x2):
    samples = ray_samples(jacobi_2x2)
    pairs = [recover_weyl_case_i(s, jacobi_2x2.A_at(0)) for s in samples]
    assert op_norm(estimate_B0(pairs) - jacobi_2x2.B_at(0)) <= 1e-6


def test_free_halfline_measure_reproduces_m():
    free = JacobiCoeffs.free(1)
    mu = measure_from_halfline(free, 0, Side.PLUS, 80)
    assert np.allclose(mu.weights.sum(axis=0), np.eye(1), atol=1e-10)
    for z in (1j, 2 + 1j, -1 + 3j):
        assert abs(mu.stieltjes(z)[0, 0] - halfline_m(free, z, 0, Side.PLUS)[0, 0]) <= 1e-6


@pytest.mark.parametrize("sign", list(Side))
def test_halfline_measure_matches_weyl(jacobi_2x2, sign):
    mu = measure_from_halfline(jacobi_2x2, 0, sign, 60)
    for z in (1j, -0.7 + 1.5j):
        assert op_norm(mu.stieltjes(z) - halfline_m(jacobi_2x2, z, 0, sign)) <= 1e-6


def test_halfline_measure_needs_room(jacobi_2x2):
    with pytest.raises(ValidationError):
        measure_from_halfline(jacobi_2x2, 0, Side.PLUS, 10)


@pytest.mark.parametrize("sign", list(Side))
@pytest.mark.parametrize("z", [100j, 100 * np.exp(1j * ANGLE), 150 * np.exp(0.3j)])
def test_moment_expansion_matches_halfline_m(jacobi_2x2, sign, z):
    mu = stabilize_halfline_measure(jacobi_2x2, 0, sign, 3)
    series = -sum(S / z ** (n + 1) for n, S in enumerate(matrix_moments(mu, 6)))
    assert op_norm(series - halfline_m(jacobi_2x2, z, 0, sign)) <= 1e-9


@pytest.mark.parametrize("sign, site", [(Side.MINUS, -1), (Side.PLUS, 1)])
def test_m_differences_decay_two_orders_faster_than_M(jacobi_2x2, sign, site):
    other = modified(jacobi_2x2, site, 0.5 * np.eye(2))
    B0 = jacobi_2x2.B_at(0)
    eye = np.eye(2)
    log_z, log_M, log_m = [], [], []
    for z in ray_points(ANGLE, 50, 500, 6):
        p1, p2 = weyl_m(jacobi_2x2, z, 0), weyl_m(other, z, 0)
        if sign == Side.MINUS:
            M1, M2 = p1.M_minus, p2.M_minus
            m1, m2 = inverse(M1), inverse(M2)
        else:
            M1, M2 = p1.M_plus, p2.M_plus
            m1, m2 = inverse(B0 - z * eye - M1), inverse(B0 - z * eye - M2)
        log_z.append(math.log(abs(z)))
        log_M.append(math.log(op_norm(M1 - M2)))
        log_m.append(math.log(op_norm(m1 - m2)))
    slope_M = np.polyfit(log_z, log_M, 1)[0]
    slope_m = np.polyfit(log_z, log_m, 1)[0]
    assert slope_M - slope_m == pytest.approx(2.0, abs=0.2)


def test_stabilizer_gives_up_at_the_length_cap(jacobi_2x2):
    with pytest.raises(DegenerateMeasure):
        stabilize_halfline_measure(jacobi_2x2, 0, Side.PLUS, 3, max_L=30)


def test_two_atom_moments():
    mu = SpectralMeasure(m=1, points=np.array([-1.0, 1.0]), weights=np.array([[[0.5]], [[0.5]]]))
    moments = [complex(S[0, 0]) for S in matrix_moments(mu, 3)]
    assert moments == pytest.approx([1, 0, 1, 0])


def test_measure_validation():
    with pytest.raises(ValidationError):
        SpectralMeasure(m=1, points=np.array([0.0, 1.0]), weights=np.array([[[0.5]], [[0.4]]]))
    with pytest.raises(ValidationError):
        SpectralMeasure(m=1, points=np.array([1.0, 0.0]), weights=np.array([[[0.5]], [[0.5]]]))


def test_single_atom_is_degenerate():
    mu = SpectralMeasure(m=1, points=np.array([0.0]), weights=np.array([[[1.0]]]))
    with pytest.raises(DegenerateMeasure):
        reconstruct_coeffs(mu, 1, 0, Side.PLUS)


@pytest.mark.parametrize("sign", list(Side))
def test_reconstruct_from_atoms(jacobi_2x2, sign):
    mu = stabilize_halfline_measure(jacobi_2x2, 0, sign, 3)
    report = reconstruct_coeffs(mu, 3, 0, sign)
    assert report.max_error(jacobi_2x2) <= 1e-8
    if sign == Side.PLUS:
        assert report.valid_B_range == (0, 3) and report.valid_A_range == (0, 2)
    else:
        assert report.valid_B_range == (-3, 0) and report.valid_A_range == (-3, -1)


def test_reconstruct_from_exact_moments(jacobi_2x2):
    mu = stabilize_halfline_measure(jacobi_2x2, 0, Side.MINUS, 3)
    report = reconstruct_from_moments(matrix_moments(mu, 6), 0, Side.MINUS)
    assert report.max_error(jacobi_2x2) <= 1e-7
    assert report.valid_B_range == (-2, 0)


def test_fit_moments_on_ring(jacobi_2x2):
    mu = stabilize_halfline_measure(jacobi_2x2, 0, Side.PLUS, 4)
    zs = ring_points(8.0, 32)
    fitted = fit_moments(zs, [mu.stieltjes(z) for z in zs], 8)
    for exact, approx in zip(matrix_moments(mu, 8), fitted):
        assert op_norm(exact - approx) <= 1e-8 * max(1.0, op_norm(exact))


@pytest.mark.parametrize("case", [Case.I, Case.II])
def test_ring_roundtrip(jacobi_2x2, case):
    report = invert_from_greens(ring_samples(jacobi_2x2), case)
    assert report.valid_B_range == (-4, 4)
    assert report.valid_A_range == (-5, 4)
    assert report.max_error(jacobi_2x2) <= 1e-6
    assert report.residuals["greens_reproduction"] <= 1e-6
    assert report.metadata["geometry"] == "ring"


def test_ring_roundtrip_case_iii_with_hint(jacobi_2x2):
    report = invert_from_greens(ring_samples(jacobi_2x2), Case.III, A0_hint=jacobi_2x2.A_at(0))
    assert report.max_error(jacobi_2x2) <= 1e-6
    assert report.metadata["A0_source"] == "hint"


def test_case_iii_wrong_hint_is_not_reproduced(jacobi_2x2):
    wrong = 1.3 * jacobi_2x2.A_at(0)
    try:
        report = invert_from_greens(ring_samples(jacobi_2x2), Case.III, A0_hint=wrong)
    except WeylError:
        return
    assert report.residuals["greens_reproduction"] > 1e-3


def test_case_iii_requires_hint(jacobi_2x2):
    with pytest.raises(UsageError):
        invert_from_greens(ring_samples(jacobi_2x2, count=8), Case.III)


@pytest.mark.parametrize("case", [Case.I, Case.II])
def test_ray_roundtrip_claims_only_settled_levels(jacobi_2x2, case):
    report = invert_from_greens(ray_samples(jacobi_2x2), case)
    assert report.metadata["geometry"] == "ray"
    assert report.metadata["level_tol"] == config.RAY_LEVEL_TOL
    lo, hi = report.valid_B_range
    assert lo <= 0 <= hi
    lo, hi = report.valid_A_range
    assert lo <= 0 <= hi
    assert op_norm(report.A[0] - jacobi_2x2.A_at(0)) <= 1e-6
    assert op_norm(report.B[0] - jacobi_2x2.B_at(0)) <= 1e-6
    assert report.max_error(jacobi_2x2) <= 10 * config.RAY_LEVEL_TOL
    assert sorted(report.B) == list(range(report.valid_B_range[0], report.valid_B_range[1] + 1))


def test_ray_roundtrip_case_iii_with_hint(jacobi_2x2):
    report = invert_from_greens(ray_samples(jacobi_2x2), Case.III, A0_hint=jacobi_2x2.A_at(0))
    assert op_norm(report.B[0] - jacobi_2x2.B_at(0)) <= 1e-6
    assert report.max_error(jacobi_2x2) <= 10 * config.RAY_LEVEL_TOL


def test_ray_needs_two_decades_even_with_hint(jacobi_2x2):
    with pytest.raises(InsufficientDecades):
        invert_from_greens(ray_samples(jacobi_2x2, lo=10, hi=50, count=6), Case.III, A0_hint=jacobi_2x2.A_at(0))


def test_scattered_points_rejected(jacobi_2x2):
    samples = [greens_sample(jacobi_2x2, z, 0) for z in (2j, 3 + 1j, -2 + 2j, 10j, -7 + 0.5j, 40 + 3j)]
    with pytest.raises(ValidationError, match="neither on one ray nor on one circle"):
        invert_from_greens(samples, Case.I)


def test_mixed_sites_rejected(jacobi_2x2):
    samples = [greens_sample(jacobi_2x2, 2j, 0), greens_sample(jacobi_2x2, 3j, 1)]
    with pytest.raises(ValidationError):
        invert_from_greens(samples, Case.I)


def test_agreement_windows():
    windows = agreement_windows(4, 0, [Side.MINUS, Side.PLUS])
    assert windows == {
        "A_minus": (-2, -1),
        "B_minus": (-1, 0),
        "A_plus": (0, 1),
        "B_plus": (0, 1),
    }


def test_agreement_identical_operators(jacobi_2x2):
    samples = ray_samples(jacobi_2x2, lo=10, hi=1000)
    estimate = local_agreement_order(samples, samples, AgreementMode.MINUS)
    assert math.isinf(estimate.n_est)
    assert "identical to noise" in estimate.flags
    assert estimate.windows == {"A_minus": UNBOUNDED, "B_minus": UNBOUNDED}


@pytest.mark.parametrize("mode", [AgreementMode.MINUS, AgreementMode.CASE_I])
def test_agreement_order_minus_side(jacobi_2x2, mode):
    other = modified(jacobi_2x2, -2, 0.5 * np.eye(2))
    estimate = local_agreement_order(
        ray_samples(jacobi_2x2, lo=10, hi=1000), ray_samples(other, lo=10, hi=1000), mode
    )
    assert estimate.order == 4
    assert estimate.windows["B_minus"] == (-1, 0)
    assert estimate.points_used >= 3


def test_agreement_order_plus_side(jacobi_2x2):
    other = modified(jacobi_2x2, 3, 0.5 * np.eye(2))
    estimate = local_agreement_order(
        ray_samples(jacobi_2x2, lo=10, hi=1000), ray_samples(other, lo=10, hi=1000), AgreementMode.PLUS
    )
    assert estimate.order == 6
    assert estimate.windows["B_plus"] == (0, 2)
    assert not estimate.flags


def test_agreement_plus_flags_B0(jacobi_2x2):
    other = modified(jacobi_2x2, 0, 0.5 * np.eye(2))
    estimate = local_agreement_order(
        ray_samples(jacobi_2x2, lo=10, hi=1000), ray_samples(other, lo=10, hi=1000), AgreementMode.PLUS,
        A0=jacobi_2x2.A_at(0),
    )
    assert "B(k0) differs between the operators" in estimate.flags
    assert all(w is None for w in estimate.windows.values())


def test_agreement_needs_paired_samples(jacobi_2x2):
    first = ray_samples(jacobi_2x2, lo=10, hi=1000)
    second = ray_samples(jacobi_2x2, lo=20, hi=2000)
    with pytest.raises(ValidationError):
        local_agreement_order(first, second, AgreementMode.MINUS)
