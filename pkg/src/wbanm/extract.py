"""Recover DOAs and amplitudes from a converged SDP block.

The dual polynomial vector of a solved primal block is psi(w) = H^H z(w)
with z(w)_e = exp(-2j*pi*w*e) on the full exponent grid 0..N-1.  Sources
live where ||psi(w)||_2 reaches 1, equivalently where

    R(w) = 1 - ||H^H z(w)||_2^2 = 1 - sum_k r_k z^k,
    r_k = sum_i P1(i, i+k),  P1 = H H^H,  r_{-k} = conj(r_k),

vanishes.  Multiplying by z^{N-1} turns R into an ordinary degree-2(N-1)
polynomial whose on-circle roots come in conjugate-reciprocal pairs
(z, 1/conj(z)) sharing one angle; the DOA follows from that angle.  The
pipeline is: root the polynomial, pair and select roots nearest the unit
circle, refine each angle by a guarded Newton step on R, convert to
degrees, then solve per-frequency least squares for the amplitudes with
exact steering-vector collisions merged into sum entries.  An optional
final Gauss-Newton pass refines the DOAs directly against the data
(variable-projection residual), which sharpens both angles and
amplitudes without introducing any grid.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from wbanm.builders import build_fast_sdp, build_full_sdp, build_robust_sdp
from wbanm.model import ArraySpec, h_support_mask, steering_vector, z_angle_to_theta
from wbanm.solver import SolveOptions, solve


@dataclass(frozen=True)
class DualPolynomial:
    """H on the full exponent grid, zero off the decimation support."""

    h: np.ndarray
    n_sensors: int
    multipliers: tuple

    def __post_init__(self):
        h = np.asarray(self.h, dtype=complex)
        mask = h_support_mask(self.n_sensors, self.multipliers)
        if h.shape != mask.shape:
            raise ValueError(f"H shape {h.shape} does not match support {mask.shape}")
        worst = np.abs(h[~mask]).max() if (~mask).any() else 0.0
        if worst > 1e-3:
            raise ValueError(f"H carries off-support mass {worst:.2e}")
        h = np.where(mask, h, 0.0)
        h.flags.writeable = False
        object.__setattr__(self, "h", h)

    @property
    def n(self) -> int:
        return self.h.shape[0]


def dual_poly_from_block(block: np.ndarray, layout: dict) -> DualPolynomial:
    """Read H out of a solved primal block (full or reduced grid)."""
    n_grid, n_f = layout["n_grid"], layout["n_f"]
    grid = np.asarray(layout["grid"])
    h_red = np.asarray(block)[:n_grid, n_grid : n_grid + n_f]
    n = int(layout["multipliers"][-1]) * (layout["n_sensors"] - 1) + 1
    h = np.zeros((n, n_f), dtype=complex)
    h[grid, :] = h_red
    return DualPolynomial(h=h, n_sensors=layout["n_sensors"], multipliers=tuple(layout["multipliers"]))


def dual_poly_vector(dp: DualPolynomial, w) -> np.ndarray:
    """psi(w) = H^H z(w), one column per w value."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    z = np.exp(-2j * np.pi * np.outer(np.arange(dp.n), w))
    return dp.h.conj().T @ z


def dual_poly_norm(dp: DualPolynomial, w):
    """||psi(w)||_2, vectorized over w; <= 1 + tol for a feasible dual."""
    vals = np.linalg.norm(dual_poly_vector(dp, w), axis=0)
    return float(vals[0]) if np.isscalar(w) or np.ndim(w) == 0 else vals


def polynomial_coeffs(dp: DualPolynomial) -> np.ndarray:
    """Ascending coefficients of z^{N-1} * R(z), length 2N-1, center 1 - r_0."""
    p1 = dp.h @ dp.h.conj().T
    n = dp.n
    coeffs = np.zeros(2 * n - 1, dtype=complex)
    for k in range(n):
        r_k = np.trace(p1, offset=k)
        if k == 0:
            r_k = r_k.real  # diagonal of H H^H; drop rounding residue
        coeffs[n - 1 + k] = -r_k
        coeffs[n - 1 - k] = -np.conj(r_k)
    coeffs[n - 1] += 1.0
    return coeffs


def eval_R(coeffs: np.ndarray, w):
    """R, R', R'' at w from ascending Laurent coefficients (center N-1).

    With z = exp(-2j*pi*w), each power k contributes c_k z^k, so the
    derivatives pick up factors (-2j*pi*k) per order; R is real by
    conjugate symmetry and the real parts are returned.
    """
    coeffs = np.asarray(coeffs)
    n = (len(coeffs) + 1) // 2
    k = np.arange(-(n - 1), n)
    w = np.atleast_1d(np.asarray(w, dtype=float))
    z_pow = np.exp(-2j * np.pi * np.outer(w, k))
    base = z_pow * coeffs
    r = base.sum(axis=1).real
    d1 = (base * (-2j * np.pi * k)).sum(axis=1).real
    d2 = (base * (-4 * np.pi**2 * k**2)).sum(axis=1).real
    if r.size == 1:
        return float(r[0]), float(d1[0]), float(d2[0])
    return r, d1, d2


def find_roots(coeffs: np.ndarray) -> np.ndarray:
    """Companion-matrix roots of the ordinary polynomial (powers of z ascending)."""
    coeffs = np.trim_zeros(np.asarray(coeffs, dtype=complex), "f")
    coeffs = np.trim_zeros(coeffs, "b")
    if coeffs.size == 0:
        raise ValueError("zero polynomial has no root structure")
    return np.roots(coeffs[::-1])


@dataclass
class RootReport:
    all_roots: np.ndarray
    selected: np.ndarray
    ws: np.ndarray
    doas_deg: np.ndarray
    residuals: np.ndarray
    failed: bool = False
    reason: str = ""
    #: all near-circle candidate angles (deduplicated, nearest-circle first);
    #: a superset of ``ws`` when the root structure is ambiguous
    candidate_ws: np.ndarray = field(default_factory=lambda: np.array([]))
    #: True when some near-circle root had no conjugate-reciprocal partner
    #: (R crosses zero along the circle instead of touching it), so the
    #: candidate-to-source assignment needs arbitration against the data
    ambiguous: bool = False


def _newton_polish_w(w, coeffs, n):
    """Up to two guarded Newton steps toward the double root of R at a source."""
    for _ in range(2):
        _, d1, d2 = eval_R(coeffs, w)
        if d2 <= 0:
            break
        step = -d1 / d2
        if abs(step) > 0.5 / n:
            break
        w += step
    return w


def select_doas(roots: np.ndarray, k: int, array: ArraySpec, coeffs=None) -> RootReport:
    """Pick k on-circle root groups and convert their angles to DOAs.

    Roots are sorted by distance of |z| from 1.  Within 0.1 of the circle,
    each root is matched to its conjugate-reciprocal partner 1/conj(z)
    within 1e-6, and the matched pair contributes one angle.  A near-circle
    root with no radial partner is a sign crossing of R along the circle
    (finite solver accuracy lets ``||psi||`` graze 1 near a source, which
    splits the tangential double root into two circle crossings instead of
    an inside/outside pair); it contributes its own angle and marks the
    report ambiguous so the caller can arbitrate the candidate angles
    against the data.  A selected root farther than 0.1 from the circle, or
    too few roots, raises the failure flag — the best-effort DOAs are still
    reported.
    """
    roots = np.asarray(roots, dtype=complex)
    order = np.argsort(np.abs(np.abs(roots) - 1.0))
    roots = roots[order]
    dist = np.abs(np.abs(roots) - 1.0)
    used = np.zeros(len(roots), dtype=bool)
    failed, reason = False, ""
    ambiguous = False
    # Group near-circle roots into radial pairs or crossing singletons;
    # groups arrive nearest-circle first because the scan follows the sort.
    group_zs, group_ws = [], []
    for i in range(len(roots)):
        if used[i] or dist[i] > 0.1:
            continue
        used[i] = True
        z = roots[i]
        mate = None
        if z != 0:
            partner = 1.0 / np.conj(z)
            cand = np.flatnonzero(~used & (dist <= 0.1))
            if cand.size:
                pd = np.abs(roots[cand] - partner)
                best = int(np.argmin(pd))
                if pd[best] <= 1e-6:
                    mate = int(cand[best])
        if mate is not None:
            used[mate] = True
        else:
            ambiguous = True
        w = -np.angle(z) / (2 * np.pi)
        if all(abs(w - w0) > 1e-10 for w0 in group_ws):
            group_zs.append(z)
            group_ws.append(w)
    reps = group_zs[:k]
    # Not enough near-circle groups: fill best-effort from the far roots.
    while len(reps) < k:
        lead = next((i for i in range(len(roots)) if not used[i]), None)
        if lead is None:
            failed, reason = True, reason or "fewer roots than sources"
            break
        used[lead] = True
        z = roots[lead]
        mate = None
        if z != 0:
            partner = 1.0 / np.conj(z)
            cand = np.flatnonzero(~used)
            if cand.size:
                pd = np.abs(roots[cand] - partner)
                best = int(np.argmin(pd))
                if pd[best] <= 1e-6:
                    mate = int(cand[best])
        if mate is None:
            mate = next((i for i in range(len(roots)) if not used[i]), None)
        if mate is not None:
            used[mate] = True
        failed, reason = True, reason or "selected root far from the unit circle"
        reps.append(z)
    reps = np.array(reps, dtype=complex)
    ws = -np.angle(reps) / (2 * np.pi) if len(reps) else np.array([])
    cand_ws = np.array(group_ws) if group_ws else np.array([])
    if coeffs is not None:
        n = (len(coeffs) + 1) // 2
        if len(ws):
            ws = np.array([_newton_polish_w(w, coeffs, n) for w in ws])
        if len(cand_ws):
            cand_ws = np.array([_newton_polish_w(w, coeffs, n) for w in cand_ws])
    resid = (
        np.abs(eval_R(coeffs, ws)[0]) if (coeffs is not None and len(ws)) else np.zeros(len(ws))
    )
    resid = np.atleast_1d(resid)
    doas = np.array(
        [z_angle_to_theta(-2 * np.pi * np.clip(w, -array.w_max, array.w_max), array) for w in ws]
    )
    return RootReport(
        all_roots=roots,
        selected=reps,
        ws=ws,
        doas_deg=doas,
        residuals=resid,
        failed=failed,
        reason=reason,
        candidate_ws=cand_ws,
        ambiguous=ambiguous,
    )


# ---------------------------------------------------------------------------
# Amplitude recovery
# ---------------------------------------------------------------------------


@dataclass
class AmplitudeReport:
    entries: list
    degenerate_freqs: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


def recover_amplitudes(y: np.ndarray, doas_w, multipliers) -> AmplitudeReport:
    """Per-frequency least squares against the estimated steering vectors.

    When two estimated DOAs collide at a frequency (identical steering
    vectors within 1e-9) only their amplitude sum is identifiable: the
    columns are merged and one sum entry is reported for the group.  A
    near-collision (condition number above 1e8) is only warned about.
    """
    y = np.asarray(y, dtype=complex)
    n_m = y.shape[0]
    mult = tuple(int(f) for f in multipliers)
    ws = np.asarray(doas_w, dtype=float)
    k = len(ws)
    if k > n_m:
        raise ValueError(f"{k} sources exceed {n_m} sensors — system is rank-deficient")
    entries, degenerate, warnings = [], [], []
    for j, f in enumerate(mult):
        cols = [steering_vector(f, w, n_m) for w in ws]
        group = list(range(k))  # union-find forest over source indices
        def find(i):
            while group[i] != i:
                group[i] = group[group[i]]
                i = group[i]
            return i
        for a in range(k):
            for b in range(a + 1, k):
                if np.linalg.norm(cols[a] - cols[b]) < 1e-9:
                    group[find(b)] = find(a)
        buckets = {}
        for i in range(k):
            buckets.setdefault(find(i), []).append(i)
        reps = sorted(buckets)
        a_mat = np.stack([cols[r] for r in reps], axis=1)
        if np.linalg.cond(a_mat) > 1e8:
            warnings.append(f"ill-conditioned amplitude system at multiplier {f}")
        sol, *_ = np.linalg.lstsq(a_mat, y[:, j], rcond=None)
        for r, val in zip(reps, sol):
            members = sorted(buckets[r])
            if len(members) == 1:
                entries.append(
                    {"source": members[0], "freq": f, "re": float(val.real), "im": float(val.imag)}
                )
            else:
                entries.append(
                    {
                        "freqs_degenerate": [f],
                        "sources": members,
                        "re": float(val.real),
                        "im": float(val.imag),
                    }
                )
                if f not in degenerate:
                    degenerate.append(f)
    return AmplitudeReport(entries=entries, degenerate_freqs=degenerate, warnings=warnings)


# ---------------------------------------------------------------------------
# Data-domain refinement
# ---------------------------------------------------------------------------


def _varpro_residual(ws, y, mult, n_m):
    res = []
    for j, f in enumerate(mult):
        a_mat = np.stack([steering_vector(f, w, n_m) for w in ws], axis=1)
        amp, *_ = np.linalg.lstsq(a_mat, y[:, j], rcond=1e-10)
        r = y[:, j] - a_mat @ amp
        res.append(r)
    r = np.concatenate(res)
    return np.concatenate([r.real, r.imag])


def _arbitrate_doas(y, multipliers, candidate_ws, k):
    """Choose the k candidate angles that best explain the data.

    Used when root selection is ambiguous (circle-crossing roots present):
    k-subsets of the candidates are scored by their projection residual
    ``||y - A(ws) amp||`` with amplitudes eliminated per frequency, and the
    smallest-residual subset wins.  A partially denoised dual polynomial can
    graze one at dozens of points, so two reductions keep the subset search
    exhaustive over the part of the pool that matters: crossing twins that
    straddle a single graze point are merged, and an oversized pool is cut
    to the candidates with the best single-atom fit (a true source carries
    signal energy no noise graze can explain).  Returns None when there is
    nothing to arbitrate.
    """
    mult = tuple(int(f) for f in multipliers)
    n_m = y.shape[0]
    n = mult[-1] * (n_m - 1) + 1
    cand = np.sort(np.asarray(candidate_ws, dtype=float))
    if len(cand):
        merged = [cand[0]]
        for w in cand[1:]:
            if w - merged[-1] < 0.05 / n:
                merged[-1] = 0.5 * (merged[-1] + w)
            else:
                merged.append(w)
        cand = np.asarray(merged)
    if len(cand) == k:
        return cand  # merging twins resolved the ambiguity outright
    if len(cand) < k:
        return None
    if len(cand) > 2 * k + 6:
        singles = np.array(
            [
                np.linalg.norm(_varpro_residual(np.array([w]), y, mult, n_m))
                for w in cand
            ]
        )
        cand = cand[np.argsort(singles)[: 2 * k + 6]]
    best_ws, best_res = None, np.inf
    for subset in itertools.combinations(range(len(cand)), k):
        ws = cand[list(subset)]
        res = float(np.linalg.norm(_varpro_residual(ws, y, mult, n_m)))
        if res < best_res:
            best_ws, best_res = ws, res
    return best_ws


def polish_doas(y: np.ndarray, ws: np.ndarray, multipliers) -> np.ndarray:
    """Gauss-Newton refinement of the scaled DOAs against the data.

    Minimizes the variable-projection residual (amplitudes eliminated by
    per-frequency least squares).  Steps are rejected wholesale if any DOA
    moves by more than 2/N or the residual fails to decrease.
    """
    y = np.asarray(y, dtype=complex)
    mult = tuple(int(f) for f in multipliers)
    n_m = y.shape[0]
    n = mult[-1] * (n_m - 1) + 1
    ws = np.asarray(ws, dtype=float)
    if len(ws) == 0:
        return ws
    try:
        res = least_squares(
            _varpro_residual,
            ws,
            args=(y, mult, n_m),
            method="lm",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
            diff_step=1e-7,
            max_nfev=200,
        )
    except Exception:
        return ws
    if np.max(np.abs(res.x - ws)) > 2.0 / n:
        return ws
    before = np.linalg.norm(_varpro_residual(ws, y, mult, n_m))
    if np.linalg.norm(res.fun) > before + 1e-15:
        return ws
    return res.x


# ---------------------------------------------------------------------------
# End-to-end pipeline
# ---------------------------------------------------------------------------


@dataclass
class EstimateConfig:
    k: int
    array: ArraySpec
    variant: str = "fast"           # "fast" or "full"
    eta: float = 0.0
    lam: float = 0.0
    polish: bool = True             # Gauss-Newton data refinement
    solve_options: SolveOptions = None


@dataclass
class TrialReport:
    doas_deg: list
    amplitudes: list
    solver: dict
    wall_ms: float
    status: str
    warnings: list = field(default_factory=list)
    #: in-memory handle on the solved dual polynomial (not serialized);
    #: lets callers render or re-grade the curve without another solve
    dual_poly: DualPolynomial | None = field(default=None, repr=False, compare=False)


def estimate(y: np.ndarray, multipliers, config: EstimateConfig) -> TrialReport:
    """Full pipeline: build -> solve -> root -> select -> refine -> amplitudes."""
    t0 = time.perf_counter()
    y = np.asarray(y, dtype=complex)
    mult = tuple(int(f) for f in multipliers)
    if config.variant == "full":
        if config.eta > 0 or config.lam > 0:
            prob = build_robust_sdp(y, config.eta, config.lam, mult)
        else:
            prob = build_full_sdp(y, mult)
    elif config.variant == "fast":
        prob = build_fast_sdp(y, mult, eta=config.eta, lam=config.lam)
    else:
        raise ValueError(f"unknown variant {config.variant!r}")
    sol = solve(prob, config.solve_options)
    warnings = []
    try:
        dp = dual_poly_from_block(sol.block, prob.layout)
        coeffs = polynomial_coeffs(dp)
        roots = find_roots(coeffs)
    except ValueError as exc:
        # a block far from feasibility (starved solver) yields no usable
        # dual polynomial; degrade to a structured failure, never an abort
        dp, coeffs = None, None
        roots = np.array([], dtype=complex)
        warnings.append(f"dual polynomial unusable: {exc}")
    report = select_doas(roots, config.k, config.array, coeffs=coeffs)
    ws = report.ws
    if report.ambiguous and not report.failed and len(report.candidate_ws) > config.k:
        arb = _arbitrate_doas(y, mult, report.candidate_ws, config.k)
        if arb is not None:
            ws = arb
            warnings.append("ambiguous root structure; candidates arbitrated by data residual")
    if config.polish and not report.failed and len(ws):
        ws = polish_doas(y, ws, mult)
    if len(ws) and np.max(np.abs(ws)) > config.array.w_max + 1e-6:
        warnings.append("estimated DOA outside the visible region; clipped")
    ws = np.clip(ws, -config.array.w_max, config.array.w_max)
    # theta is decreasing in w, so descending w lists the angles ascending;
    # amplitude source indices then refer to positions in doas_deg
    ws = np.sort(np.asarray(ws, dtype=float))[::-1]
    if len(ws) and len(ws) <= y.shape[0]:
        amp = recover_amplitudes(y, ws, mult)
    else:
        amp = AmplitudeReport(entries=[])
        if len(ws):
            amp.warnings.append(
                f"{len(ws)} sources exceed {y.shape[0]} sensors; amplitudes not identifiable"
            )
    doas = [z_angle_to_theta(-2 * np.pi * w, config.array) for w in ws]
    # more sources than sensors leaves the amplitudes unidentifiable, so the
    # estimation contract (angles plus per-frequency amplitudes) cannot hold
    ok = sol.status == "Converged" and not report.failed and config.k <= y.shape[0]
    status = "ok" if ok else "estimation-failure"
    if report.failed:
        warnings.append(report.reason)
    warnings.extend(amp.warnings)
    wall_ms = (time.perf_counter() - t0) * 1e3
    return TrialReport(
        doas_deg=[float(d) for d in doas],
        amplitudes=amp.entries,
        solver={
            "iters": sol.iterations,
            "gap": sol.gap,
            "objective": sol.objective,
            "dual_objective": sol.dual_objective,
            "primal_res": sol.residuals["primal"],
            "dual_res": sol.residuals["dual"],
            "status": sol.status,
            "block_dim": prob.block_dim,
        },
        wall_ms=wall_ms,
        status=status,
        warnings=warnings,
        dual_poly=dp,
    )


def report_to_dict(report: TrialReport) -> dict:
    return {
        "doas_deg": report.doas_deg,
        "amplitudes": report.amplitudes,
        "solver": report.solver,
        "wall_ms": report.wall_ms,
        "status": report.status,
        "warnings": report.warnings,
    }


def save_report(path, report: TrialReport):
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=2)
        fh.write("\n")
