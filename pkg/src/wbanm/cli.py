"""The ``wbanm`` command line: simulation, estimation, certificates, sweeps.

Each subcommand wraps one library entry point and writes delimited or JSON
artifacts; figures are optional derived outputs (``--plot``).  Exit codes
follow a fixed contract:

* ``0`` — success (and, for ``duality-check``, gap within tolerance);
* ``1`` — computation finished but the checked property failed;
* ``2`` — unusable input: malformed JSON (reported with line/column),
  unreadable files, or dimension mismatches;
* ``3`` — the computation itself failed (solver non-convergence or an
  estimation failure; partial reports are still written).

``--json-errors`` switches stderr diagnostics to one-line JSON documents for
machine consumption.  All commands are deterministic given identical inputs
and seeds.
"""

from __future__ import annotations

import json
import math
import os

import click
import numpy as np

from . import __version__
from .builders import (
    build_dual_sdp,
    build_fast_sdp,
    build_full_sdp,
    build_robust_sdp,
    dump_problem,
)
from .certificate import (
    build_certificate,
    certificate_curve,
    detect_collisions,
    modulate_amplitudes,
    save_certificate_curve,
    verify_certificate,
)
from .evaluation import experiment_from_dict, run_monte_carlo, write_outputs
from .extract import EstimateConfig, dual_poly_norm, estimate, save_report
from .model import (
    ArraySpec,
    doa_to_w,
    load_data_matrix,
    save_data_matrix,
    scenario_from_dict,
    scenario_to_dict,
    synthesize,
)
from .solver import SolveOptions, solve

#: Relative duality-gap tolerance asserted by ``duality-check``.
GAP_TOL = 1e-4

#: Verdict numbering of the collision census cases.
CASE_NUMBER = {"Case1": 1, "Case2": 2, "Case3": 3}


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _emit_error(ctx: click.Context, code: int, message: str, **payload) -> None:
    """Print a diagnostic (plain or JSON) to stderr and exit with ``code``."""
    root = ctx.find_root()
    if root.obj and root.obj.get("json_errors"):
        doc = {"error": message, "exit_code": code}
        doc.update(payload)
        click.echo(json.dumps(doc), err=True)
    else:
        click.echo(f"error: {message}", err=True)
    ctx.exit(code)


def _load_json_file(ctx: click.Context, path):
    """Parse a JSON file; malformed content exits 2 with line/column."""
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        _emit_error(
            ctx,
            2,
            f"malformed JSON in {path}: line {exc.lineno} column {exc.colno}: {exc.msg}",
            path=str(path),
            line=exc.lineno,
            column=exc.colno,
        )
    except OSError as exc:
        _emit_error(ctx, 2, f"cannot read {path}: {exc}", path=str(path))


def _sibling(path, suffix: str) -> str:
    """Replace the extension of ``path`` with ``suffix`` (keeps the stem)."""
    return os.path.splitext(str(path))[0] + suffix


def _write_json(path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _parse_doas(ctx: click.Context, text: str, units: str) -> np.ndarray:
    """Comma-separated locations -> torus coordinates ``w``.

    ``deg`` inputs are converted with the default half-wavelength geometry
    (``w = cos(theta)/2``); ``w`` inputs are taken verbatim.
    """
    try:
        vals = np.array([float(t) for t in text.split(",") if t.strip() != ""])
    except ValueError:
        _emit_error(ctx, 2, f"cannot parse --doas {text!r} as comma-separated floats")
    if vals.size == 0:
        _emit_error(ctx, 2, "--doas is empty")
    if units == "deg":
        array = ArraySpec(n_sensors=2, spacing_m=1.7)
        try:
            return np.asarray(doa_to_w(vals, array), dtype=float)
        except ValueError as exc:
            _emit_error(ctx, 2, str(exc))
    if np.any(np.abs(vals) > 0.5):
        _emit_error(ctx, 2, f"locations {vals.tolist()} outside the torus [-1/2, 1/2]")
    return vals


def _estimate_config_from_dict(data: dict) -> EstimateConfig:
    """Estimation settings from their JSON form.

    Required keys: ``k`` and ``array`` (``n_sensors``/``spacing_m`` plus
    optional ``speed_mps``/``f0_hz``).  Optional: ``variant`` (fast|full),
    ``eta``, ``lambda`` (alias ``lam``), ``polish``, ``max_iter``.
    """
    arr = data["array"]
    array = ArraySpec(
        n_sensors=int(arr["n_sensors"]),
        spacing_m=float(arr["spacing_m"]),
        speed_mps=float(arr.get("speed_mps", 340.0)),
        f0_hz=float(arr.get("f0_hz", 100.0)),
    )
    variant = str(data.get("variant", "fast"))
    if variant not in ("fast", "full"):
        raise ValueError(f"unknown variant {variant!r}; expected 'fast' or 'full'")
    options = SolveOptions(max_iter=int(data["max_iter"])) if data.get("max_iter") else None
    return EstimateConfig(
        k=int(data["k"]),
        array=array,
        variant=variant,
        eta=float(data.get("eta", 0.0)),
        lam=float(data.get("lambda", data.get("lam", 0.0))),
        polish=bool(data.get("polish", True)),
        solve_options=options,
    )


def _build_problem(y: np.ndarray, multipliers, config: EstimateConfig):
    """The SDP that :func:`wbanm.extract.estimate` would assemble."""
    if config.variant == "full":
        if config.eta > 0 or config.lam > 0:
            return build_robust_sdp(y, config.eta, config.lam, multipliers)
        return build_full_sdp(y, multipliers)
    return build_fast_sdp(y, multipliers, eta=config.eta, lam=config.lam)


# ---------------------------------------------------------------------------
# Command group
# ---------------------------------------------------------------------------


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="wbanm")
@click.option(
    "--threads",
    type=click.IntRange(min=1),
    default=1,
    show_default=True,
    help="Worker processes for trial-level parallelism (montecarlo).",
)
@click.option(
    "--json-errors",
    is_flag=True,
    help="Emit error diagnostics as one-line JSON documents on stderr.",
)
@click.pass_context
def main(ctx: click.Context, threads: int, json_errors: bool) -> None:
    """Gridless multi-frequency DOA estimation via atomic norm minimization."""
    ctx.ensure_object(dict)
    ctx.obj["threads"] = threads
    ctx.obj["json_errors"] = json_errors


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(), help="Scenario JSON file.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output data-matrix CSV.")
@click.option("--seed", type=int, default=None, help="Override the scenario noise seed.")
@click.pass_context
def simulate(ctx: click.Context, scenario_path, out_path, seed) -> None:
    """Synthesize a data matrix Y = X + noise from a scenario file.

    Writes the ``sensor,freq,re,im`` CSV plus the fully resolved scenario
    (defaults and seed applied) as ``<out>_scenario.json`` beside it, so the
    draw can be reproduced from the echo alone.
    """
    data = _load_json_file(ctx, scenario_path)
    try:
        if seed is not None:
            data = dict(data)
            data["seed"] = int(seed)
        scenario = scenario_from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        _emit_error(ctx, 2, f"invalid scenario {scenario_path}: {exc}", path=str(scenario_path))
    result = synthesize(scenario)
    save_data_matrix(out_path, result.y, scenario.freqs.multipliers)
    echo_path = _sibling(out_path, "_scenario.json")
    _write_json(echo_path, scenario_to_dict(scenario))
    click.echo(
        f"wrote {out_path} ({scenario.array.n_sensors} sensors x "
        f"{scenario.freqs.n_freqs} frequencies) and {echo_path}"
    )


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


@main.command("estimate")
@click.option("--data", "data_path", required=True, type=click.Path(), help="Data-matrix CSV.")
@click.option("--config", "config_path", required=True, type=click.Path(), help="Estimation config JSON.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Trial-report JSON path.")
@click.option("--variant", type=click.Choice(["fast", "full"]), default=None, help="Override the SDP variant.")
@click.option("--eta", type=float, default=None, help="Override the Frobenius noise bound.")
@click.option("--lambda", "lam", type=float, default=None, help="Override the column-group weight.")
@click.option("--polish/--no-polish", "polish", default=None, help="Override the nonlinear refinement toggle.")
@click.option("--max-iter", type=click.IntRange(min=1), default=None, help="Override the solver iteration budget.")
@click.option("--dump-sdp", "dump_path", type=click.Path(), default=None, help="Also write the assembled SDP as JSON.")
@click.option("--plot/--no-plot", default=False, show_default=True, help="Render the dual-polynomial norm as PNG.")
@click.pass_context
def estimate_cmd(
    ctx: click.Context,
    data_path,
    config_path,
    out_path,
    variant,
    eta,
    lam,
    polish,
    max_iter,
    dump_path,
    plot,
) -> None:
    """Estimate DOAs and per-frequency amplitudes from a data matrix.

    Exits 0 when the solver converged and the root extraction succeeded;
    exits 3 on an estimation failure (the report is still written); exits 2
    when the data dimensions do not match the configuration.
    """
    raw = _load_json_file(ctx, config_path)
    try:
        config = _estimate_config_from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        _emit_error(ctx, 2, f"invalid estimate config {config_path}: {exc}", path=str(config_path))
    if variant is not None:
        config.variant = variant
    if eta is not None:
        config.eta = eta
    if lam is not None:
        config.lam = lam
    if polish is not None:
        config.polish = polish
    if max_iter is not None:
        config.solve_options = SolveOptions(max_iter=max_iter)
    try:
        y, multipliers = load_data_matrix(data_path)
    except (OSError, ValueError) as exc:
        _emit_error(ctx, 2, f"cannot read data matrix {data_path}: {exc}", path=str(data_path))
    if y.shape[0] != config.array.n_sensors:
        _emit_error(
            ctx,
            2,
            f"data has {y.shape[0]} sensor rows but the config expects "
            f"{config.array.n_sensors}",
            rows=int(y.shape[0]),
            expected=int(config.array.n_sensors),
        )
    if dump_path is not None:
        dump_problem(dump_path, _build_problem(y, multipliers, config))
        click.echo(f"wrote {dump_path}")
    report = estimate(y, multipliers, config)
    save_report(out_path, report)
    click.echo(f"wrote {out_path}")
    if plot and report.dual_poly is not None:
        from .plotting import plot_dual_polynomial

        w_grid = np.linspace(-config.array.w_max, config.array.w_max, 2001)
        norms = dual_poly_norm(report.dual_poly, w_grid)
        doas_w = [doa_to_w(t, config.array) for t in report.doas_deg]
        png = plot_dual_polynomial(w_grid, norms, _sibling(out_path, "_dual.png"), doas_w=doas_w)
        click.echo(f"wrote {png}")
    click.echo(f"status: {report.status}")
    for theta in report.doas_deg:
        click.echo(f"doa_deg: {theta!r}")
    for line in report.warnings:
        click.echo(f"warning: {line}", err=True)
    if report.status != "ok":
        ctx.exit(3)


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------


@main.command()
@click.option("--doas", "doas_text", required=True, help="Comma-separated source locations.")
@click.option("--units", type=click.Choice(["w", "deg"]), default="w", show_default=True, help="Units of --doas.")
@click.option("--nf", required=True, type=click.IntRange(min=1), help="Number of consecutive frequencies.")
@click.option("--nm", required=True, type=click.IntRange(min=5), help="Array size (must be 1 mod 4).")
@click.option("--flat", is_flag=True, help="Flat amplitudes 1/sqrt(nf) with unit signs (default: random unit rows).")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for random amplitudes and signs.")
@click.option("--delta-min", type=float, default=0.01, show_default=True, help="Near-collision half-width.")
@click.option("--grid", "grid_points", type=click.IntRange(min=16), default=2000, show_default=True, help="Curve grid size.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Certificate-curve CSV path.")
@click.option("--plot/--no-plot", default=True, show_default=True, help="Render the curve as PNG.")
@click.pass_context
def certify(
    ctx: click.Context,
    doas_text,
    units,
    nf,
    nm,
    flat,
    seed,
    delta_min,
    grid_points,
    out_path,
    plot,
) -> None:
    """Build a dual certificate and grade it on a dense grid.

    Writes the curve CSV (``w,psi_norm,abs_psi_f1..``) plus a JSON verdict
    ``<out>_verdict.json`` with ``valid`` (off-source norm strictly below
    one and all systems feasible) and the collision ``case`` (1 exact,
    2 near, 3 none).
    """
    if (nm - 1) % 4 != 0:
        _emit_error(
            ctx,
            2,
            f"--nm must be 1 mod 4 so the kernel bandwidth (nm-1)/4 is an integer, got {nm}",
        )
    ws = _parse_doas(ctx, doas_text, units)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    k = ws.size
    if flat:
        x = np.full((k, nf), 1.0 / math.sqrt(nf), dtype=complex)
        signs = np.ones(k, dtype=complex)
    else:
        x = rng.normal(size=(k, nf)) + 1j * rng.normal(size=(k, nf))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        signs = np.exp(2j * np.pi * rng.uniform(size=k))
    try:
        systems = build_certificate(ws, signs, modulate_amplitudes(x, ws, nm), nm)
    except ValueError as exc:
        _emit_error(ctx, 2, f"cannot build certificate: {exc}")
    grid = np.linspace(-0.5, 0.5, grid_points, endpoint=False)
    psi, _ = certificate_curve(systems, grid)
    save_certificate_curve(out_path, grid, psi)
    click.echo(f"wrote {out_path}")
    verdict = verify_certificate(systems)
    collisions = detect_collisions(ws, nf, delta_min)
    doc = {
        "valid": bool(verdict["valid"]),
        "case": CASE_NUMBER[collisions.case],
        "max_off_norm": verdict["max_off_norm"],
        "argmax_w": verdict["argmax_w"],
        "node_norms": verdict["node_norms"],
        "infeasible_freqs": verdict["infeasible_freqs"],
        "delta_min": collisions.delta_min,
        "collisions": [entry.to_dict() for entry in collisions.entries],
    }
    verdict_path = _sibling(out_path, "_verdict.json")
    _write_json(verdict_path, doc)
    click.echo(f"wrote {verdict_path}")
    if plot:
        from .plotting import plot_certificate

        png = plot_certificate(out_path, _sibling(out_path, ".png"), doas_w=ws)
        click.echo(f"wrote {png}")
    click.echo(
        f"valid: {doc['valid']}  case: {doc['case']}  "
        f"max off-source norm: {doc['max_off_norm']:.6f}"
    )


# ---------------------------------------------------------------------------
# collisions
# ---------------------------------------------------------------------------


@main.command()
@click.option("--doas", "doas_text", required=True, help="Comma-separated source locations.")
@click.option("--units", type=click.Choice(["w", "deg"]), default="w", show_default=True, help="Units of --doas.")
@click.option("--nf", required=True, type=click.IntRange(min=2), help="Largest frequency multiplier to examine.")
@click.option("--delta-min", type=float, default=0.01, show_default=True, help="Near-collision half-width.")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Optional JSON report path.")
@click.pass_context
def collisions(ctx: click.Context, doas_text, units, nf, delta_min, out_path) -> None:
    """Tabulate exact and near collisions of the dilated source set.

    A pair collides at frequency i when its gap is (close to) k/i for an
    integer 0 < k < i; the case is 1 with any exact collision, 2 with only
    near collisions, 3 otherwise.
    """
    ws = _parse_doas(ctx, doas_text, units)
    try:
        report = detect_collisions(ws, nf, delta_min)
    except ValueError as exc:
        _emit_error(ctx, 2, str(exc))
    click.echo(f"case: {CASE_NUMBER[report.case]}")
    if report.entries:
        click.echo("freq  kind   k  pair                      epsilon")
        for e in report.entries:
            click.echo(
                f"{e.freq_index:4d}  {e.kind:<5s} {e.k:2d}  "
                f"({e.pair[0]:+.6f}, {e.pair[1]:+.6f})  {e.epsilon:.3e}"
            )
    else:
        click.echo("no collisions detected")
    if out_path is not None:
        doc = report.to_dict()
        doc["case_number"] = CASE_NUMBER[report.case]
        _write_json(out_path, doc)
        click.echo(f"wrote {out_path}")


# ---------------------------------------------------------------------------
# montecarlo
# ---------------------------------------------------------------------------


@main.command()
@click.option("--experiment", "experiment_path", required=True, type=click.Path(), help="Experiment JSON file.")
@click.option("--out-dir", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--plot/--no-plot", default=True, show_default=True, help="Render sweep/histogram figures.")
@click.pass_context
def montecarlo(ctx: click.Context, experiment_path, out_dir, plot) -> None:
    """Run a seeded Monte Carlo sweep and write its result files.

    Produces ``<name>_sweep.csv``, ``<name>_manifest.json``,
    ``<name>_estimates.csv`` and, when the experiment sets a bin width,
    ``<name>_histogram.csv`` under --out-dir.
    """
    raw = _load_json_file(ctx, experiment_path)
    try:
        config = experiment_from_dict(raw)
    except (KeyError, TypeError, ValueError) as exc:
        _emit_error(
            ctx, 2, f"invalid experiment {experiment_path}: {exc}", path=str(experiment_path)
        )
    table = run_monte_carlo(config, threads=ctx.find_root().obj.get("threads", 1))
    written = write_outputs(table, out_dir)
    if plot:
        from .plotting import plot_histogram, plot_sweep

        sweep_csv = next(p for p in written if p.endswith("_sweep.csv"))
        written.append(plot_sweep(sweep_csv, _sibling(sweep_csv, ".png"), xlabel=config.axis))
        hist_csv = next((p for p in written if p.endswith("_histogram.csv")), None)
        if hist_csv is not None:
            truths = list(config.doas_deg) if config.doa_rule == "fixed" else None
            written.append(plot_histogram(hist_csv, _sibling(hist_csv, ".png"), true_doas_deg=truths))
    for path in written:
        click.echo(f"wrote {path}")
    failures = sum(int(row["failures"]) for row in table.points)
    click.echo(f"sweep complete: {len(table.points)} points, {failures} failed trials")


# ---------------------------------------------------------------------------
# duality-check
# ---------------------------------------------------------------------------


@main.command("duality-check")
@click.option("--data", "data_path", required=True, type=click.Path(), help="Data-matrix CSV.")
@click.option("--max-iter", type=click.IntRange(min=1), default=None, help="Solver iteration budget override.")
@click.pass_context
def duality_check(ctx: click.Context, data_path, max_iter) -> None:
    """Solve the primal and dual problems and report the relative gap.

    Exits 0 when both solves converge and the relative gap is at most 1e-4;
    exits 1 on a converged but larger gap; exits 3 when either solver fails
    to converge.  Requires consecutive multipliers 1..N_f.
    """
    try:
        y, multipliers = load_data_matrix(data_path)
    except (OSError, ValueError) as exc:
        _emit_error(ctx, 2, f"cannot read data matrix {data_path}: {exc}", path=str(data_path))
    if list(multipliers) != list(range(1, len(multipliers) + 1)):
        _emit_error(
            ctx,
            2,
            f"duality check requires consecutive multipliers 1..N_f, got {list(multipliers)}",
        )
    options = SolveOptions(max_iter=max_iter) if max_iter is not None else SolveOptions()
    sol_primal = solve(build_full_sdp(y, multipliers), options)
    sol_dual = solve(build_dual_sdp(y, multipliers), options)
    primal, dual = float(sol_primal.objective), float(sol_dual.objective)
    gap = abs(primal - dual) / (1.0 + abs(primal))
    click.echo(f"primal optimum: {primal!r}")
    click.echo(f"dual optimum:   {dual!r}")
    click.echo(f"relative gap:   {gap:.6e}")
    if sol_primal.status != "Converged" or sol_dual.status != "Converged":
        _emit_error(
            ctx,
            3,
            f"solver did not converge (primal: {sol_primal.status}, dual: {sol_dual.status})",
            primal_status=sol_primal.status,
            dual_status=sol_dual.status,
        )
    if gap > GAP_TOL:
        _emit_error(ctx, 1, f"relative gap {gap:.3e} exceeds {GAP_TOL:.0e}", gap=gap)


if __name__ == "__main__":
    main()
