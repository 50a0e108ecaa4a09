"""Operator-splitting solver for single-PSD-block SDPs.

Every problem in this package has the shape

    maximize   Re<C, G>  -  eta*||Q(G)||_F  -  lambda*||Q(G)||_{1,2}
    subject to G in L,  G >= 0  (Hermitian PSD),

where L is an affine subspace described entirely by three families acting
on disjoint entry sets of the block:

* ``pins``   — individual entries fixed to constants (zero off-support
  rows, the identity corner, data pins);
* ``sums``   — groups of entries with a prescribed complex sum (the
  trace-indexed constraints on the Toeplitz-like corner);
* ``eqs``    — groups of entries constrained to share one value
  (Toeplitz equality in the dual form).

``Q(G)`` reads a designated set of strictly-upper entries (the data
sub-block); the two norm penalties are handled by closed-form proxes.
Because the families never share entries and no group mixes diagonal
with off-diagonal positions, the projection onto L decomposes
coordinate-wise and is exact.

The method is two-block consensus ADMM: alternate (a) the projection
onto L fused with the prox of the objective, (b) projection onto the
PSD cone, with a scaled dual variable and over-relaxation.  At every
iteration the quantity ``D = rho*(V - G1)`` (V the pre-projection
point) is an exact element of range(A*) plus a subgradient lift on the
Q entries, so pairing its constrained part with any affine-feasible
point yields a Lagrange dual value; the solver reports it and declares
convergence only when residuals and the primal-dual gap are both small.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

_STATUS_CONVERGED = "Converged"
_STATUS_MAXITER = "MaxIter"
_STATUS_INFEASIBLE = "Infeasible"


@dataclass
class SdpProblem:
    """One Hermitian PSD block with disjoint-support affine structure.

    All index arrays are flat indices into the ``block_dim x block_dim``
    matrix.  ``pins`` must list both triangles (with conjugate values);
    ``sums``/``eqs``/``q_flat`` list upper-triangle representatives whose
    mirrors are recorded in ``mirror_src``/``mirror_dst``.
    """

    block_dim: int
    c: np.ndarray                      # Hermitian objective coefficient
    sense: str = "max"                 # "max" or "min"
    pins_idx: np.ndarray = None        # entries fixed to pins_val
    pins_val: np.ndarray = None
    sum_idx: np.ndarray = None         # concatenated group members
    sum_offsets: np.ndarray = None     # group start offsets (len = n_groups+1)
    sum_targets: np.ndarray = None     # complex sum per group
    eq_idx: np.ndarray = None          # concatenated equal-value groups
    eq_offsets: np.ndarray = None
    q_flat: np.ndarray = None          # (n_rows, n_cols) indices of the Q sub-block
    eta: float = 0.0                   # Frobenius weight on Q
    lam: float = 0.0                   # column-group (l_{1,2}) weight on Q
    mirror_src: np.ndarray = None      # strictly-upper coords touched by sums/eqs/Q
    mirror_dst: np.ndarray = None      # their transposed positions
    gfeas_idx: np.ndarray = None       # sparse affine-feasible point (both triangles)
    gfeas_val: np.ndarray = None
    layout: dict = field(default_factory=dict)

    def feasible_point(self) -> np.ndarray:
        g = np.zeros((self.block_dim, self.block_dim), dtype=complex)
        if self.gfeas_idx is not None and len(self.gfeas_idx):
            g.flat[self.gfeas_idx] = self.gfeas_val
        return g


@dataclass
class SdpSolution:
    block: np.ndarray
    objective: float
    dual_objective: float
    residuals: dict
    iterations: int
    status: str
    log: np.ndarray = None             # rows (iter, primal_res, dual_res, objective)

    @property
    def gap(self) -> float:
        return abs(self.objective - self.dual_objective) / (1.0 + abs(self.objective))


@dataclass
class SolveOptions:
    tol: float = 1e-7
    gap_tol: float = 1e-5
    max_iter: int = 50000
    rho: float = 1.0
    over_relax: float = 1.6
    adapt_every: int = 50              # residual-balancing cadence for rho
    adapt_until: int = 2000            # freeze rho afterwards
    check_every: int = 25
    log_every: int = 0                 # 0 disables the iteration log
    tol_psd: float = 1e-7

    def __post_init__(self):
        cap = os.environ.get("ANM_MAX_ITERS")
        if cap is not None:
            self.max_iter = min(self.max_iter, int(cap))


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def project_psd(m: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD matrix: symmetrize, then clip eigenvalues at 0."""
    m = np.asarray(m)
    sym = 0.5 * (m + m.conj().T)
    try:
        vals, vecs = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"eigendecomposition failed on a {sym.shape[0]}x{sym.shape[0]} block "
            f"(|max| entry {np.abs(sym).max():.3e})"
        ) from exc
    if vals[0] >= 0:
        return sym
    return (vecs * np.maximum(vals, 0.0)) @ vecs.conj().T


def complex_to_real_embed(m: np.ndarray) -> np.ndarray:
    """[[Re M, -Im M],[Im M, Re M]]: doubles every eigenvalue's multiplicity.

    Kept as the textbook bridge to a real symmetric eigensolver; the solver
    itself calls the complex Hermitian routine directly and this embedding
    serves as an independent cross-check of that path.
    """
    m = np.asarray(m)
    return np.block([[m.real, -m.imag], [m.imag, m.real]])


def shrink(x: np.ndarray, t: float) -> np.ndarray:
    """Block soft-threshold x -> x * max(0, 1 - t/||x||_F) (zero inside the ball)."""
    nrm = np.linalg.norm(x)
    if nrm <= t:
        return np.zeros_like(x)
    return x * (1.0 - t / nrm)


def prox_column_group(q: np.ndarray, t: float) -> np.ndarray:
    """Column-wise soft-threshold: prox of t * (sum of column 2-norms)."""
    norms = np.linalg.norm(q, axis=0)
    scale = np.maximum(0.0, 1.0 - t / np.maximum(norms, 1e-300))
    return q * scale


def prox_q_penalty(q: np.ndarray, eta_t: float, lam_t: float) -> np.ndarray:
    """Prox of eta_t*||.||_F + lam_t*||.||_{1,2} (nested groups: columns first)."""
    out = q
    if lam_t > 0:
        out = prox_column_group(out, lam_t)
    if eta_t > 0:
        out = shrink(out, eta_t)
    return out


def _penalty_value(q: np.ndarray, eta: float, lam: float) -> float:
    val = 0.0
    if eta > 0:
        val += eta * np.linalg.norm(q)
    if lam > 0:
        val += lam * np.linalg.norm(q, axis=0).sum()
    return val


# ---------------------------------------------------------------------------
# Main iteration
# ---------------------------------------------------------------------------


def _project_affine_with_prox(v, prob, rho):
    """argmin_{G in L} h(Q(G)) + rho/2 ||G - v||^2 — exact, coordinate-wise.

    Strictly-upper entries carry weight 2 in the Hermitian metric, which
    cancels inside uniform groups and turns the Q prox parameter into
    1/(2*rho).
    """
    g = v.copy()
    if prob.pins_idx is not None and len(prob.pins_idx):
        g.flat[prob.pins_idx] = prob.pins_val
    if prob.sum_idx is not None and len(prob.sum_idx):
        vals = g.flat[prob.sum_idx]
        sizes = np.diff(prob.sum_offsets)
        sums = np.add.reduceat(vals, prob.sum_offsets[:-1])
        g.flat[prob.sum_idx] = vals + np.repeat((prob.sum_targets - sums) / sizes, sizes)
    if prob.eq_idx is not None and len(prob.eq_idx):
        vals = g.flat[prob.eq_idx]
        sizes = np.diff(prob.eq_offsets)
        means = np.add.reduceat(vals, prob.eq_offsets[:-1]) / sizes
        g.flat[prob.eq_idx] = np.repeat(means, sizes)
    if prob.q_flat is not None and (prob.eta > 0 or prob.lam > 0):
        q = g.flat[prob.q_flat]
        g.flat[prob.q_flat] = prox_q_penalty(
            q, prob.eta / (2.0 * rho), prob.lam / (2.0 * rho)
        )
    if prob.mirror_src is not None and len(prob.mirror_src):
        g.flat[prob.mirror_dst] = np.conj(g.flat[prob.mirror_src])
    return g


def solve(problem: SdpProblem, opts: SolveOptions = None) -> SdpSolution:
    """Run ADMM to the requested residual and primal-dual-gap tolerances.

    Status is ``Converged`` only when both scaled residuals are <= tol and
    |objective - dual_objective| <= gap_tol*(1+|objective|); ``Infeasible``
    flags a diverging consensus gap, ``MaxIter`` everything else.
    """
    if opts is None:
        opts = SolveOptions()
    n = problem.block_dim
    factor = 1.0 if problem.sense == "max" else -1.0
    c_int = factor * np.asarray(problem.c, dtype=complex)
    rho = opts.rho
    c_over_rho = c_int / rho

    g2 = problem.feasible_point()
    u = np.zeros_like(g2)
    alpha = opts.over_relax
    has_q = problem.q_flat is not None

    def objective_at(g):
        val = np.vdot(c_int, g).real
        if has_q and (problem.eta > 0 or problem.lam > 0):
            val -= _penalty_value(g.flat[problem.q_flat], problem.eta, problem.lam)
        return val

    def dual_at(v, g1):
        if problem.gfeas_idx is None or not len(problem.gfeas_idx):
            return 0.0
        d = rho * (v.flat[problem.gfeas_idx] - g1.flat[problem.gfeas_idx])
        return np.sum(np.conj(d) * problem.gfeas_val).real

    log_rows = []
    status = _STATUS_MAXITER
    r_p = r_d = np.inf
    obj_int = dual_int = 0.0
    it = 0

    for it in range(1, opts.max_iter + 1):
        v = g2 - u
        v += c_over_rho
        g1 = _project_affine_with_prox(v, problem, rho)
        g_hat = alpha * g1 + (1.0 - alpha) * g2
        g2_new = project_psd(g_hat + u)
        u += g_hat - g2_new

        nr_p = np.linalg.norm(g1 - g2_new)
        r_p = nr_p / max(1.0, np.linalg.norm(g1), np.linalg.norm(g2_new))
        nr_d = rho * np.linalg.norm(g2_new - g2)
        r_d = nr_d / max(1.0, rho * np.linalg.norm(u))
        g2 = g2_new

        if nr_p > 1e6:
            status = _STATUS_INFEASIBLE
            break

        if opts.log_every and (it % opts.log_every == 0 or it == 1):
            log_rows.append((it, r_p, r_d, factor * objective_at(g1)))

        if it % opts.check_every == 0 or it == opts.max_iter:
            obj_int = objective_at(g1)
            dual_int = dual_at(v, g1)
            if (
                r_p <= opts.tol
                and r_d <= opts.tol
                and abs(obj_int - dual_int) <= opts.gap_tol * (1.0 + abs(obj_int))
            ):
                status = _STATUS_CONVERGED
                break

        if (
            it <= opts.adapt_until
            and opts.adapt_every
            and it % opts.adapt_every == 0
        ):
            if r_p > 10.0 * r_d:
                rho *= 2.0
                u /= 2.0
                c_over_rho = c_int / rho
            elif r_d > 10.0 * r_p:
                rho /= 2.0
                u *= 2.0
                c_over_rho = c_int / rho

    else:
        it = opts.max_iter

    if status != _STATUS_CONVERGED:
        # final numbers for the report (loop may have exited without a check)
        v = g2 - u + c_over_rho
        g1 = _project_affine_with_prox(v, problem, rho)
        obj_int = objective_at(g1)
        dual_int = dual_at(v, g1)

    return SdpSolution(
        block=g2,
        objective=factor * obj_int,
        dual_objective=factor * dual_int,
        residuals={"primal": float(r_p), "dual": float(r_d)},
        iterations=it,
        status=status,
        log=np.array(log_rows) if log_rows else None,
    )


def write_iteration_log(path, solution: SdpSolution):
    """Dump the solver's iteration log as CSV: iter, primal_res, dual_res, objective."""
    if solution.log is None:
        raise ValueError("solution carries no iteration log (set log_every > 0)")
    header = "iter,primal_res,dual_res,objective"
    np.savetxt(
        path,
        solution.log,
        delimiter=",",
        header=header,
        comments="",
        fmt=["%d", "%.10e", "%.10e", "%.10e"],
    )
