import numpy as np
import numpy.testing as npt
import pytest

from wbanm.builders import (
    build_dual_sdp,
    build_fast_sdp,
    build_full_sdp,
    build_robust_sdp,
    default_lambda,
    dump_problem,
    eta_from_sigma,
    problem_to_json,
    verify_trace_structure,
)
from wbanm.model import (
    ArraySpec,
    FrequencySet,
    Scenario,
    Source,
    doa_to_w,
    steering_matrix,
    synthesize,
)
from wbanm.solver import SolveOptions, solve


def tiny_scenario(n_sensors=3, mult=(1, 2), thetas=(75.0,), gains=None, seed=5):
    rng = np.random.default_rng(seed)
    gains = gains or [1.0] * len(thetas)
    sources = []
    for th, g in zip(thetas, gains):
        x = rng.standard_normal(len(mult)) + 1j * rng.standard_normal(len(mult))
        sources.append(Source(theta_deg=th, amplitude_vec=x, gain=g / np.linalg.norm(x)))
    return Scenario(
        array=ArraySpec(n_sensors, 1.7),
        freqs=FrequencySet(mult),
        sources=tuple(sources),
    )


# ---------------------------------------------------------------------------
# Structure
# ---------------------------------------------------------------------------


def test_full_build_minimal_case_layout():
    # 2 sensors, 1 frequency: block 3x3, offset sums trace=1 and P0(0,1)=0,
    # identity corner pinned, H fully on-support.
    y = np.ones((2, 1), dtype=complex)
    prob = build_full_sdp(y)
    assert prob.block_dim == 3
    assert prob.layout["n_grid"] == 2
    assert len(prob.sum_offsets) - 1 == 2          # k = 0, 1
    npt.assert_array_equal(np.diff(prob.sum_offsets), [2, 1])
    npt.assert_array_equal(prob.sum_targets, [1.0, 0.0])
    npt.assert_array_equal(prob.pins_idx, [8])     # corner (2,2) only
    npt.assert_array_equal(prob.pins_val, [1.0])
    assert prob.q_flat.shape == (2, 1)


def test_full_build_constraint_counts():
    n_m, n_f = 4, 3
    n_grid = n_f * (n_m - 1) + 1                   # 10
    y = np.zeros((n_m, n_f), dtype=complex)
    prob = build_full_sdp(y)
    assert prob.block_dim == n_grid + n_f
    assert len(prob.sum_offsets) - 1 == n_grid     # one sum per offset k
    assert len(prob.sum_idx) == n_grid * (n_grid + 1) // 2
    # H off-support pins: (n_grid - n_m) per column, both triangles; corner n_f^2
    expected_pins = n_f**2 + 2 * sum(n_grid - n_m for _ in range(n_f))
    assert len(prob.pins_idx) == expected_pins


def test_feasible_point_satisfies_structure():
    prob = build_full_sdp(np.zeros((4, 2), dtype=complex))
    g = prob.feasible_point()
    n_grid = prob.layout["n_grid"]
    rep = verify_trace_structure(g[:n_grid, :n_grid], 4, (1, 2))
    assert rep["max_violation"] <= 1e-14
    npt.assert_array_equal(g[n_grid:, n_grid:], np.eye(2))


def test_robust_zero_weights_bit_identical_to_full():
    y = synthesize(tiny_scenario()).y
    full, robust = build_full_sdp(y), build_robust_sdp(y, 0.0, 0.0)
    npt.assert_array_equal(full.c, robust.c)
    for name in ("pins_idx", "pins_val", "sum_idx", "sum_offsets", "sum_targets",
                 "q_flat", "mirror_src", "mirror_dst", "gfeas_idx", "gfeas_val"):
        npt.assert_array_equal(getattr(full, name), getattr(robust, name))
    assert (full.eta, full.lam) == (robust.eta, robust.lam) == (0.0, 0.0)


def test_robust_rejects_negative_weights():
    y = np.zeros((3, 2), dtype=complex)
    with pytest.raises(ValueError):
        build_robust_sdp(y, -0.1, 0.0)
    with pytest.raises(ValueError):
        build_fast_sdp(y, (1, 2), lam=-1.0)


def test_full_rejects_nonconsecutive_multipliers():
    with pytest.raises(ValueError, match="build_fast_sdp"):
        build_full_sdp(np.zeros((3, 2), dtype=complex), (1, 3))


def test_fast_single_frequency_equals_full():
    y = synthesize(tiny_scenario(n_sensors=4, mult=(1,))).y
    fast, full = build_fast_sdp(y, (1,)), build_full_sdp(y)
    assert fast.block_dim == full.block_dim
    npt.assert_array_equal(fast.sum_idx, full.sum_idx)
    npt.assert_array_equal(fast.c, full.c)
    npt.assert_array_equal(fast.pins_idx, full.pins_idx)


def test_fast_block_dims_vs_full():
    y = np.zeros((5, 3), dtype=complex)
    fast = build_fast_sdp(y, (1, 2, 3))
    full = build_full_sdp(y)
    assert fast.layout["n_grid"] == 9 and full.layout["n_grid"] == 13
    assert fast.block_dim == 12 and full.block_dim == 16
    # realized offsets only: every group key is a difference of support exponents
    u = fast.layout["grid"]
    diffs = {int(b - a) for a in u for b in u if b >= a}
    assert len(fast.sum_offsets) - 1 == len(diffs)


def test_fast_shared_row_serves_two_columns():
    # exponent 6 = 2*3 = 3*2 gives one row feeding both data columns
    y = np.arange(8, dtype=complex).reshape(4, 2) + 1j
    prob = build_fast_sdp(y, (2, 3))
    rows = prob.q_flat // prob.block_dim
    assert len(np.intersect1d(rows[:, 0], rows[:, 1])) > 0


# ---------------------------------------------------------------------------
# Solved values
# ---------------------------------------------------------------------------


def test_primal_optimum_is_sum_of_gains():
    scn = tiny_scenario(thetas=(70.0,), gains=[1.3])
    sol = solve(build_full_sdp(synthesize(scn).y))
    assert sol.status == "Converged"
    assert sol.objective == pytest.approx(1.3, rel=1e-3)


def test_strong_duality_and_dual_value():
    scn = tiny_scenario(n_sensors=3, mult=(1, 2), thetas=(68.0,), gains=[0.9])
    y = synthesize(scn).y
    primal = solve(build_full_sdp(y))
    dual = solve(build_dual_sdp(y))
    assert primal.status == dual.status == "Converged"
    rel = abs(primal.objective - dual.objective) / (1 + abs(primal.objective))
    assert rel <= 1e-4
    assert dual.objective == pytest.approx(0.9, rel=1e-3)


def test_dual_zero_data_has_zero_optimum():
    sol = solve(build_dual_sdp(np.zeros((3, 2), dtype=complex)))
    assert sol.status == "Converged"
    assert abs(sol.objective) <= 1e-6
    npt.assert_allclose(sol.block, 0.0, atol=1e-5)


def test_dual_toeplitz_corner_rank_one_single_source():
    scn = tiny_scenario(n_sensors=3, mult=(1, 2), thetas=(62.0,))
    sol = solve(build_dual_sdp(synthesize(scn).y))
    n_grid = sol.block.shape[0] - 2
    toep = sol.block[:n_grid, :n_grid]
    # Toeplitz equality held by construction
    for k in range(1, n_grid):
        diag = np.diagonal(toep, offset=k)
        npt.assert_allclose(diag, diag[0], atol=1e-6)
    vals = np.linalg.eigvalsh(toep)
    assert vals[-2] / vals[-1] < 1e-5


def test_objective_homogeneous_in_data_scale():
    y = synthesize(tiny_scenario(thetas=(81.0,), gains=[0.7])).y
    a = solve(build_full_sdp(y)).objective
    b = solve(build_full_sdp(2.5 * y)).objective
    assert b == pytest.approx(2.5 * a, rel=1e-5)


def test_converged_primal_block_properties():
    scn = tiny_scenario(n_sensors=4, mult=(1, 2), thetas=(73.0, 101.0))
    y = synthesize(scn).y
    prob = build_full_sdp(y)
    sol = solve(prob)
    assert sol.status == "Converged"
    n_grid = prob.layout["n_grid"]
    rep = verify_trace_structure(sol.block[:n_grid, :n_grid], 4, (1, 2))
    assert rep["max_violation"] <= 1e-6
    npt.assert_allclose(sol.block[n_grid:, n_grid:], np.eye(2), atol=1e-6)
    # dual-certificate positivity: 1 - ||H^H z(w)||^2 >= -1e-6 on a dense grid
    h = sol.block[:n_grid, n_grid:]
    wgrid = np.linspace(-0.5, 0.5, 10 * n_grid, endpoint=False)
    z = np.exp(-2j * np.pi * np.outer(np.arange(n_grid), wgrid))
    r = 1.0 - np.sum(np.abs(h.conj().T @ z) ** 2, axis=0)
    assert r.min() >= -1e-6


def test_fast_objective_matches_full():
    scn = tiny_scenario(n_sensors=4, mult=(1, 2, 3), thetas=(77.0,), gains=[1.1])
    y = synthesize(scn).y
    a = solve(build_full_sdp(y)).objective
    b = solve(build_fast_sdp(y, (1, 2, 3))).objective
    assert b == pytest.approx(a, rel=1e-4)


# ---------------------------------------------------------------------------
# Helpers and dumps
# ---------------------------------------------------------------------------


def test_verify_trace_structure_examples():
    n = 7
    assert verify_trace_structure(np.eye(n) / n, n, (1,))["max_violation"] <= 1e-14
    assert verify_trace_structure(np.eye(n), n, (1,))["max_violation"] == pytest.approx(n - 1)
    with pytest.raises(ValueError):
        verify_trace_structure(np.eye(4), 3, (1, 2))


def test_verify_trace_structure_reduced():
    u = [0, 1, 2, 4]  # n_sensors=3, mult=(1,2)
    p = np.zeros((4, 4))
    np.fill_diagonal(p, 1 / 4)
    assert verify_trace_structure(p, 3, (1, 2), reduced=True)["max_violation"] <= 1e-14
    p[0, 1] = 0.3  # offset 1 sum now violated
    assert verify_trace_structure(p, 3, (1, 2), reduced=True)["max_violation"] == pytest.approx(0.3)


def test_eta_helper_formula():
    assert eta_from_sigma(2.0, 12, 5) == pytest.approx(np.sqrt(60 + 2 * np.sqrt(60)))
    assert eta_from_sigma(0.0, 12, 5) == 0.0


def test_default_lambda():
    assert default_lambda(5) == pytest.approx(0.625)
    assert default_lambda(8, k=0.0) == 0.0


def test_problem_json_dump(tmp_path):
    import json

    prob = build_fast_sdp(synthesize(tiny_scenario()).y, (1, 2))
    d = problem_to_json(prob)
    assert d["block_dim"] == prob.block_dim
    assert len(d["pins"]["idx"]) == len(d["pins"]["val"])
    assert d["layout"]["variant"] == "fast"
    path = tmp_path / "prob.json"
    dump_problem(path, prob)
    assert json.loads(path.read_text())["sense"] == "max"
