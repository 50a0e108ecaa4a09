"""Assemble the SDP variants for a multi-frequency data matrix.

Four builds over a data matrix Y (n_sensors x n_freqs):

* full     — maximize <Q, Y>_R over the block [[P0, H], [H^H, I]],
             with H supported on the decimation pattern of R* and the
             Toeplitz-like sums sum_i P0(i, i+k) = delta_k for every
             grid offset k;
* robust   — same feasible set, objective minus eta*||Q||_F and
             lambda*||Q||_{1,2} (full is robust with zero weights);
* fast     — the reduced form whose grid keeps only the exponent
             support set U = {m*f}; the offset sums run over realized
             differences U_j - U_i;
* dual     — minimize (u0 + tr W)/2 over [[Toep(u), Yt], [Yt^H, W]]
             with the entries of Yt pinned to Y on the decimation
             support.  Built for validation (strong duality, Toeplitz
             rank); production extraction uses the primal H.

Every build returns a :class:`wbanm.solver.SdpProblem` whose constraint
families touch pairwise-disjoint entries and never mix diagonal with
off-diagonal positions inside one group — the property the solver's
closed-form affine projection relies on (asserted here at build time).
"""

from __future__ import annotations

import json

import numpy as np

from wbanm.model import frequency_support_set
from wbanm.solver import SdpProblem


def eta_from_sigma(sigma: float, n_sensors: int, n_freqs: int) -> float:
    """Noise-floor weight eta = sigma/2 * sqrt(N*Nf + 2*sqrt(N*Nf)) for the
    Frobenius penalty, with N*Nf the number of independent noise entries."""
    p = n_sensors * n_freqs
    return 0.5 * sigma * np.sqrt(p + 2.0 * np.sqrt(p))


def default_lambda(n_freqs: int, k: float = 0.125) -> float:
    """Column-sparsity weight lambda = k * n_freqs (k = 0.125 unless overridden)."""
    return k * n_freqs


def _resolve_multipliers(n_cols, multipliers):
    if multipliers is None:
        return tuple(range(1, n_cols + 1))
    mult = tuple(int(f) for f in multipliers)
    if len(mult) != n_cols:
        raise ValueError(f"{len(mult)} multipliers for {n_cols} data columns")
    return mult


def _assert_disjoint(prob: SdpProblem):
    chunks = []
    for arr in (prob.pins_idx, prob.sum_idx, prob.eq_idx):
        if arr is not None and len(arr):
            chunks.append(np.asarray(arr).ravel())
    if prob.q_flat is not None:
        chunks.append(np.asarray(prob.q_flat).ravel())
    if not chunks:
        return
    allidx = np.concatenate(chunks)
    if len(np.unique(allidx)) != len(allidx):
        raise AssertionError("constraint families overlap — broken build")


def _build_primal(y, multipliers, eta, lam, reduced):
    y = np.asarray(y, dtype=complex)
    n_m, n_f = y.shape
    mult = _resolve_multipliers(n_f, multipliers)
    if reduced:
        grid = frequency_support_set(n_m, mult)
    else:
        grid = np.arange(mult[-1] * (n_m - 1) + 1)
    n_grid = len(grid)
    n = n_grid + n_f

    # offset-sum groups on the P block: coords (i, j), i <= j, keyed by grid[j]-grid[i]
    groups = {}
    for i in range(n_grid):
        for j in range(i, n_grid):
            groups.setdefault(int(grid[j] - grid[i]), []).append(i * n + j)
    ks = sorted(groups)
    sum_idx = np.array([c for k in ks for c in groups[k]], dtype=np.int64)
    sizes = [len(groups[k]) for k in ks]
    sum_offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    sum_targets = np.array([1.0 + 0j if k == 0 else 0.0 + 0j for k in ks])

    # pins: identity corner, plus H entries off the decimation support
    pins, pin_vals = [], []
    for a in range(n_f):
        for b in range(n_f):
            pins.append((n_grid + a) * n + (n_grid + b))
            pin_vals.append(1.0 + 0j if a == b else 0.0 + 0j)
    q_flat = np.empty((n_m, n_f), dtype=np.int64)
    row_of = {int(e): r for r, e in enumerate(grid)}
    for j, f in enumerate(mult):
        col = n_grid + j
        supported = set()
        for m in range(n_m):
            r = row_of[f * m]
            q_flat[m, j] = r * n + col
            supported.add(r)
        for r in range(n_grid):
            if r not in supported:
                pins.append(r * n + col)
                pin_vals.append(0.0 + 0j)
                pins.append(col * n + r)
                pin_vals.append(0.0 + 0j)

    # objective <Q, Y>_R through the H sub-block (both triangles, half weight)
    c = np.zeros((n, n), dtype=complex)
    c.flat[q_flat] = 0.5 * y
    c += c.conj().T

    upper = np.concatenate([sum_idx[sum_idx // n != sum_idx % n], q_flat.ravel()])
    mirror_dst = (upper % n) * n + (upper // n)

    gfeas_idx = np.concatenate(
        [np.arange(n_grid) * (n + 1), (n_grid + np.arange(n_f)) * (n + 1)]
    )
    gfeas_val = np.concatenate(
        [np.full(n_grid, 1.0 / n_grid, dtype=complex), np.ones(n_f, dtype=complex)]
    )

    prob = SdpProblem(
        block_dim=n,
        c=c,
        sense="max",
        pins_idx=np.array(pins, dtype=np.int64),
        pins_val=np.array(pin_vals),
        sum_idx=sum_idx,
        sum_offsets=sum_offsets,
        sum_targets=sum_targets,
        q_flat=q_flat,
        eta=float(eta),
        lam=float(lam),
        mirror_src=upper,
        mirror_dst=mirror_dst,
        gfeas_idx=gfeas_idx,
        gfeas_val=gfeas_val,
        layout={
            "variant": "fast" if reduced else "full",
            "n_grid": n_grid,
            "n_f": n_f,
            "n_sensors": n_m,
            "multipliers": mult,
            "grid": grid,
            "block_dim": n,
        },
    )
    _assert_disjoint(prob)
    return prob


def build_full_sdp(y: np.ndarray, multipliers=None) -> SdpProblem:
    """Noise-free primal on the complete exponent grid 0..N-1."""
    y = np.asarray(y, dtype=complex)
    mult = _resolve_multipliers(y.shape[1], multipliers)
    if mult != tuple(range(1, len(mult) + 1)):
        raise ValueError(
            f"full build requires the consecutive multiplier set 1..{len(mult)}; "
            f"got {mult} — use build_fast_sdp"
        )
    return _build_primal(y, mult, 0.0, 0.0, reduced=False)


def build_robust_sdp(y: np.ndarray, eta: float, lam: float, multipliers=None) -> SdpProblem:
    """Regularized primal; with eta = lam = 0 this is exactly the full build."""
    if eta < 0 or lam < 0:
        raise ValueError("regularization weights must be nonnegative")
    y = np.asarray(y, dtype=complex)
    mult = _resolve_multipliers(y.shape[1], multipliers)
    if mult != tuple(range(1, len(mult) + 1)):
        raise ValueError(
            f"robust build requires the consecutive multiplier set 1..{len(mult)}; "
            f"got {mult} — use build_fast_sdp"
        )
    return _build_primal(y, mult, eta, lam, reduced=False)


def build_fast_sdp(y: np.ndarray, multipliers=None, eta: float = 0.0, lam: float = 0.0) -> SdpProblem:
    """Reduced primal on the exponent support set U (any multiplier set)."""
    if eta < 0 or lam < 0:
        raise ValueError("regularization weights must be nonnegative")
    return _build_primal(y, multipliers, eta, lam, reduced=True)


def build_dual_sdp(y: np.ndarray, multipliers=None) -> SdpProblem:
    """Dual form: minimize (u0 + tr W)/2 over [[Toep(u), Yt], [Yt^H, W]] >= 0
    with Yt pinned to Y on the decimation support (off-support entries free).

    u0 is the common diagonal value of the Toeplitz corner, recovered as
    tr(Toep(u))/N, which puts the objective in diagonal form.
    """
    y = np.asarray(y, dtype=complex)
    n_m, n_f = y.shape
    mult = _resolve_multipliers(n_f, multipliers)
    n_grid = mult[-1] * (n_m - 1) + 1
    n = n_grid + n_f

    # Toeplitz equality groups per diagonal offset (singletons are vacuous)
    eq_idx, eq_sizes = [], []
    for k in range(0, n_grid - 1):
        coords = [i * n + (i + k) for i in range(n_grid - k)]
        if len(coords) >= 2:
            eq_idx.extend(coords)
            eq_sizes.append(len(coords))
    eq_idx = np.array(eq_idx, dtype=np.int64)
    eq_offsets = np.concatenate([[0], np.cumsum(eq_sizes)]).astype(np.int64)

    pins, pin_vals = [], []
    for j, f in enumerate(mult):
        col = n_grid + j
        for m in range(n_m):
            e = f * m
            pins.append(e * n + col)
            pin_vals.append(complex(y[m, j]))
            pins.append(col * n + e)
            pin_vals.append(complex(np.conj(y[m, j])))
    pins = np.array(pins, dtype=np.int64)
    pin_vals = np.array(pin_vals)

    c = np.zeros((n, n), dtype=complex)
    c[np.arange(n_grid), np.arange(n_grid)] = 0.5 / n_grid
    c[n_grid + np.arange(n_f), n_grid + np.arange(n_f)] = 0.5

    upper = eq_idx[eq_idx // n != eq_idx % n]
    mirror_dst = (upper % n) * n + (upper // n)

    prob = SdpProblem(
        block_dim=n,
        c=c,
        sense="min",
        pins_idx=pins,
        pins_val=pin_vals,
        eq_idx=eq_idx,
        eq_offsets=eq_offsets,
        mirror_src=upper,
        mirror_dst=mirror_dst,
        gfeas_idx=pins.copy(),
        gfeas_val=pin_vals.copy(),
        layout={
            "variant": "dual",
            "n_grid": n_grid,
            "n_f": n_f,
            "n_sensors": n_m,
            "multipliers": mult,
            "grid": np.arange(n_grid),
            "block_dim": n,
        },
    )
    _assert_disjoint(prob)
    return prob


def verify_trace_structure(p0: np.ndarray, n_sensors: int, multipliers, reduced=False) -> dict:
    """Max deviation of the offset sums sum P(i, i+k) from delta_k.

    ``reduced`` grades a U-indexed block (sums over realized differences of
    the support set); otherwise plain matrix diagonals.
    """
    p0 = np.asarray(p0)
    mult = tuple(int(f) for f in multipliers)
    grid = (
        frequency_support_set(n_sensors, mult)
        if reduced
        else np.arange(mult[-1] * (n_sensors - 1) + 1)
    )
    if p0.shape != (len(grid), len(grid)):
        raise ValueError(f"expected a {len(grid)}x{len(grid)} block, got {p0.shape}")
    sums = {}
    for i in range(len(grid)):
        for j in range(i, len(grid)):
            k = int(grid[j] - grid[i])
            sums[k] = sums.get(k, 0.0) + p0[i, j]
    worst = 0.0
    for k, s in sums.items():
        worst = max(worst, abs(s - (1.0 if k == 0 else 0.0)))
    return {"max_violation": float(worst)}


def problem_to_json(prob: SdpProblem) -> dict:
    """Debug dump: dims plus every constraint triplet, for diffing two builds."""

    def _ints(a):
        return [] if a is None else np.asarray(a).ravel().astype(int).tolist()

    def _cplx(a):
        if a is None:
            return []
        a = np.asarray(a).ravel()
        return [[float(v.real), float(v.imag)] for v in a]

    layout = {
        k: (v.tolist() if isinstance(v, np.ndarray) else v)
        for k, v in prob.layout.items()
    }
    return {
        "block_dim": prob.block_dim,
        "sense": prob.sense,
        "objective": {
            "idx": np.flatnonzero(prob.c.ravel()).astype(int).tolist(),
            "val": _cplx(prob.c.ravel()[np.flatnonzero(prob.c.ravel())]),
        },
        "pins": {"idx": _ints(prob.pins_idx), "val": _cplx(prob.pins_val)},
        "sums": {
            "idx": _ints(prob.sum_idx),
            "offsets": _ints(prob.sum_offsets),
            "targets": _cplx(prob.sum_targets),
        },
        "eqs": {"idx": _ints(prob.eq_idx), "offsets": _ints(prob.eq_offsets)},
        "q_flat": _ints(prob.q_flat),
        "eta": prob.eta,
        "lam": prob.lam,
        "layout": layout,
    }


def dump_problem(path, prob: SdpProblem):
    with open(path, "w") as fh:
        json.dump(problem_to_json(prob), fh, indent=1)
        fh.write("\n")
