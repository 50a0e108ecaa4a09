import json

import numpy as np
import numpy.testing as npt
import pytest

from wbanm.builders import build_full_sdp
from wbanm.extract import (
    AmplitudeReport,
    DualPolynomial,
    EstimateConfig,
    dual_poly_from_block,
    dual_poly_norm,
    estimate,
    eval_R,
    find_roots,
    polish_doas,
    polynomial_coeffs,
    recover_amplitudes,
    report_to_dict,
    save_report,
    select_doas,
)
from wbanm.model import (
    ArraySpec,
    doa_to_w,
    map_R_adjoint,
    steering_vector,
    synthesize,
)
from wbanm.model import FrequencySet, Scenario, Source
from wbanm.solver import solve

HALF = ArraySpec(n_sensors=12, spacing_m=1.7)


def make_y(ws, coeffs_per_source, mult, n_m):
    """Direct synthesis from scaled DOAs: column j = sum_k c_k(j) a(F_j, w_k)."""
    y = np.zeros((n_m, len(mult)), dtype=complex)
    for w, c in zip(ws, coeffs_per_source):
        for j, f in enumerate(mult):
            y[:, j] += c[j] * steering_vector(f, w, n_m)
    return y


# ---------------------------------------------------------------------------
# Dual polynomial
# ---------------------------------------------------------------------------


def test_dual_polynomial_enforces_support():
    h = np.zeros((5, 2), dtype=complex)
    h[1, 1] = 0.5  # exponent 1 is not divisible by multiplier 2
    with pytest.raises(ValueError):
        DualPolynomial(h=h, n_sensors=3, multipliers=(1, 2))
    h[1, 1] = 1e-8  # solver-noise level gets zeroed silently
    dp = DualPolynomial(h=h, n_sensors=3, multipliers=(1, 2))
    assert dp.h[1, 1] == 0


def test_dual_poly_norm_zero_and_monomial():
    h = np.zeros((7, 2), dtype=complex)
    dp = DualPolynomial(h=h, n_sensors=4, multipliers=(1, 2))
    assert dual_poly_norm(dp, 0.3) == 0.0
    q = np.zeros((4, 2), dtype=complex)
    q[2, 1] = 1.0
    dp = DualPolynomial(h=map_R_adjoint(q, (1, 2)), n_sensors=4, multipliers=(1, 2))
    grid = np.linspace(-0.5, 0.5, 64)
    npt.assert_allclose(dual_poly_norm(dp, grid), 1.0, atol=1e-12)


def test_polynomial_coeffs_zero_h():
    dp = DualPolynomial(np.zeros((4, 1)), n_sensors=4, multipliers=(1,))
    c = polynomial_coeffs(dp)
    expect = np.zeros(7, dtype=complex)
    expect[3] = 1.0
    npt.assert_array_equal(c, expect)


def test_polynomial_coeffs_two_sensor_example():
    h = np.array([[1.0], [1.0]]) / np.sqrt(2)
    dp = DualPolynomial(h, n_sensors=2, multipliers=(1,))
    npt.assert_allclose(polynomial_coeffs(dp), [-0.5, 0.0, -0.5], atol=1e-15)
    roots = find_roots(polynomial_coeffs(dp))
    npt.assert_allclose(sorted(roots, key=lambda z: z.imag), [-1j, 1j], atol=1e-12)


def test_coefficients_conjugate_symmetric():
    rng = np.random.default_rng(3)
    h = np.zeros((7, 2), dtype=complex)
    for j, f in enumerate((1, 2)):
        for m in range(4):
            h[f * m, j] = rng.standard_normal() + 1j * rng.standard_normal()
    c = polynomial_coeffs(DualPolynomial(h, n_sensors=4, multipliers=(1, 2)))
    n = 7
    for k in range(n):
        assert c[n - 1 + k] == np.conj(c[n - 1 - k])


def test_two_route_evaluation_agrees():
    rng = np.random.default_rng(4)
    h = np.zeros((7, 2), dtype=complex)
    mask_rows = {0: [0, 1, 2, 3], 1: [0, 2, 4, 6]}
    for j, rows in mask_rows.items():
        h[rows, j] = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    dp = DualPolynomial(h, n_sensors=4, multipliers=(1, 2))
    c = polynomial_coeffs(dp)
    for w in rng.uniform(-0.5, 0.5, 100):
        direct = 1.0 - dual_poly_norm(dp, w) ** 2
        via_coeffs = eval_R(c, w)[0]
        assert abs(direct - via_coeffs) <= 1e-10


def test_eval_R_derivatives_match_finite_differences():
    rng = np.random.default_rng(5)
    h = rng.standard_normal((5, 1)) + 1j * rng.standard_normal((5, 1))
    c = polynomial_coeffs(DualPolynomial(h, n_sensors=5, multipliers=(1,)))
    w0, eps = 0.123, 1e-6
    r0, d1, d2 = eval_R(c, w0)
    rp = eval_R(c, w0 + eps)[0]
    rm = eval_R(c, w0 - eps)[0]
    assert d1 == pytest.approx((rp - rm) / (2 * eps), abs=1e-4)
    assert d2 == pytest.approx((rp - 2 * r0 + rm) / eps**2, abs=1e-2)


# ---------------------------------------------------------------------------
# Rooting and DOA selection
# ---------------------------------------------------------------------------


def test_find_roots_basic():
    npt.assert_allclose(sorted(find_roots([-1, 0, 1]).real), [-1, 1], atol=1e-12)
    npt.assert_allclose(sorted(find_roots([1, 0, 1]), key=lambda z: z.imag), [-1j, 1j], atol=1e-12)
    with pytest.raises(ValueError):
        find_roots(np.zeros(5))


def test_find_roots_strips_zero_roots():
    # z^2 * (z - 1): trimming the front removes the roots at the origin
    roots = find_roots([0, 0, -1, 1])
    npt.assert_allclose(roots, [1.0], atol=1e-12)


def test_select_doas_conjugate_pair_example():
    report = select_doas(np.array([1j, -1j]), 1, HALF)
    assert not report.failed
    assert len(report.doas_deg) == 1
    assert report.doas_deg[0] == pytest.approx(60.0) or report.doas_deg[0] == pytest.approx(120.0)
    assert abs(report.ws[0]) == pytest.approx(0.25)


def test_select_doas_flags_far_roots():
    report = select_doas(np.array([2.0 + 0j, 0.5 + 0j, 3j, -3j]), 2, HALF)
    assert report.failed
    assert len(report.doas_deg) == 2  # best effort still reported


def test_select_doas_flags_too_few_roots():
    report = select_doas(np.array([1j, -1j]), 3, HALF)
    assert report.failed


def test_select_doas_pairs_reciprocal_partners():
    # two sources as slightly split double roots: z(1+e) and z(1-e) pair up
    z1 = np.exp(-2j * np.pi * 0.11)
    z2 = np.exp(-2j * np.pi * -0.31)
    eps = 1e-8
    roots = np.array([z1 * (1 + eps), z1 * (1 - eps), z2 * (1 + eps), z2 * (1 - eps)])
    report = select_doas(roots, 2, HALF)
    assert not report.failed
    npt.assert_allclose(sorted(report.ws), [-0.31, 0.11], atol=1e-7)


# ---------------------------------------------------------------------------
# Amplitudes
# ---------------------------------------------------------------------------


def test_recover_amplitudes_single_source_oracle():
    mult = (1, 2, 3)
    c = np.array([0.3 - 0.2j, 1.1 + 0.4j, -0.7j])
    w = doa_to_w(71.0, HALF)
    y = make_y([w], [c], mult, 6)
    rep = recover_amplitudes(y, [w], mult)
    assert rep.degenerate_freqs == []
    for entry in rep.entries:
        j = mult.index(entry["freq"])
        assert complex(entry["re"], entry["im"]) == pytest.approx(c[j], abs=1e-8)


def test_recover_amplitudes_collision_merges_frequency_three():
    # w = {1/2, 1/6}: the multiplier-3 steering vectors coincide exactly
    mult = (1, 2, 3, 4, 5)
    rng = np.random.default_rng(9)
    c1 = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    c2 = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    y = make_y([0.5, 1 / 6], [c1, c2], mult, 8)
    rep = recover_amplitudes(y, [0.5, 1 / 6], mult)
    assert rep.degenerate_freqs == [3]
    merged = [e for e in rep.entries if "freqs_degenerate" in e]
    assert len(merged) == 1
    assert merged[0]["freqs_degenerate"] == [3] and merged[0]["sources"] == [0, 1]
    assert complex(merged[0]["re"], merged[0]["im"]) == pytest.approx(c1[2] + c2[2], abs=1e-8)
    for entry in rep.entries:
        if "source" in entry:
            c = (c1, c2)[entry["source"]]
            j = mult.index(entry["freq"])
            assert complex(entry["re"], entry["im"]) == pytest.approx(c[j], abs=1e-7)


def test_recover_amplitudes_near_collision_warns():
    mult = (1,)
    y = make_y([0.1, 0.1 + 1e-9], [[1.0], [1.0]], mult, 5)
    rep = recover_amplitudes(y, [0.1, 0.1 + 1e-9], mult)
    assert any("ill-conditioned" in w for w in rep.warnings)
    assert rep.degenerate_freqs == []


def test_recover_amplitudes_rejects_overdetermined_k():
    with pytest.raises(ValueError):
        recover_amplitudes(np.ones((3, 1), dtype=complex), [0.1, 0.2, 0.3, 0.4], (1,))


# ---------------------------------------------------------------------------
# Data-domain polish
# ---------------------------------------------------------------------------


def test_polish_recovers_perturbed_doas():
    mult = (1, 2)
    ws = np.array([0.21, -0.13])
    y = make_y(ws, [[1.0, 0.4j], [0.8, -0.5]], mult, 6)
    polished = polish_doas(y, ws + np.array([8e-4, -5e-4]), mult)
    npt.assert_allclose(polished, ws, atol=1e-10)


def test_polish_never_exceeds_step_guard():
    # the refinement either stays within 2/N of the start or reverts entirely
    mult = (1,)
    y = make_y([0.2], [[1.0]], mult, 4)
    n = 4
    for start in (0.45, -0.3, 0.2 + 0.4):
        out = polish_doas(y, np.array([start]), mult)
        assert abs(out[0] - start) <= 2.0 / n + 1e-12


# ---------------------------------------------------------------------------
# End-to-end estimate
# ---------------------------------------------------------------------------


def small_scenario(thetas=(78.0,), n_m=4, mult=(1, 2), seed=2):
    rng = np.random.default_rng(seed)
    sources = tuple(
        Source(
            theta_deg=t,
            amplitude_vec=rng.standard_normal(len(mult)) + 1j * rng.standard_normal(len(mult)),
        )
        for t in thetas
    )
    return Scenario(array=ArraySpec(n_m, 1.7), freqs=FrequencySet(mult), sources=sources)


@pytest.mark.parametrize("variant", ["fast", "full"])
def test_estimate_recovers_single_source(variant):
    scn = small_scenario()
    y = synthesize(scn).y
    cfg = EstimateConfig(k=1, array=scn.array, variant=variant)
    rep = estimate(y, scn.freqs.multipliers, cfg)
    assert rep.status == "ok"
    assert rep.doas_deg[0] == pytest.approx(78.0, abs=1e-6)
    assert rep.solver["status"] == "Converged"
    assert rep.wall_ms > 0


def test_estimate_two_sources_and_amplitudes():
    scn = small_scenario(thetas=(65.0, 110.0), n_m=5, mult=(1, 2, 3), seed=6)
    res = synthesize(scn)
    cfg = EstimateConfig(k=2, array=scn.array)
    rep = estimate(res.y, scn.freqs.multipliers, cfg)
    assert rep.status == "ok"
    npt.assert_allclose(rep.doas_deg, [65.0, 110.0], atol=1e-5)
    # amplitudes reproduce gain * amplitude_vec per source and frequency
    order = np.argsort([s.theta_deg for s in scn.sources])
    for entry in rep.amplitudes:
        src = scn.sources[order[entry["source"]]]
        j = scn.freqs.multipliers.index(entry["freq"])
        truth = src.gain * src.amplitude_vec[j]
        assert complex(entry["re"], entry["im"]) == pytest.approx(truth, abs=1e-6)


def test_estimate_failure_on_zero_data():
    cfg = EstimateConfig(k=1, array=ArraySpec(4, 1.7))
    rep = estimate(np.zeros((4, 2), dtype=complex), (1, 2), cfg)
    assert rep.status == "estimation-failure"
    assert rep.doas_deg == []


def test_estimate_report_json(tmp_path):
    scn = small_scenario()
    rep = estimate(synthesize(scn).y, scn.freqs.multipliers, EstimateConfig(k=1, array=scn.array))
    d = report_to_dict(rep)
    assert set(d) >= {"doas_deg", "amplitudes", "solver", "wall_ms", "status"}
    assert set(d["solver"]) >= {"iters", "gap"}
    path = tmp_path / "report.json"
    save_report(path, rep)
    assert json.loads(path.read_text())["doas_deg"] == rep.doas_deg


def test_selected_roots_have_reciprocal_partners():
    scn = small_scenario(thetas=(83.0,), n_m=4, mult=(1, 2))
    y = synthesize(scn).y
    prob = build_full_sdp(y)
    sol = solve(prob)
    dp = dual_poly_from_block(sol.block, prob.layout)
    c = polynomial_coeffs(dp)
    roots = find_roots(c)
    report = select_doas(roots, 1, scn.array, coeffs=c)
    z = report.selected[0]
    partner = 1.0 / np.conj(z)
    poly = np.trim_zeros(np.trim_zeros(c, "f"), "b")[::-1]
    val = np.polyval(poly, partner) / np.abs(poly).max()
    assert abs(val) <= 1e-6
