"""Monte Carlo evaluation harness for multi-frequency DOA estimation.

Runs seeded sweeps (over SNR, source count, or angular separation) of the
atomic-norm estimators and a conventional-beamforming baseline, aggregates
per-trial errors into RMSE/MAE tables with a failure clamp, and writes the
results as delimited text plus a JSON manifest.

Error metric: per trial the estimated angles are matched to the true angles
after sorting both lists, each absolute error is clamped at
``failure_threshold_deg`` *before* aggregation (missing estimates count at
the clamp), and

.. math::

   \\mathrm{RMSE} = \\sqrt{\\frac{1}{MC}\\sum_m \\frac{1}{K}\\sum_k
                           (\\hat\\theta_{mk} - \\theta_{mk})^2},
   \\qquad
   \\mathrm{MAE} = \\frac{1}{MC}\\sum_m \\frac{1}{K}\\sum_k
                   |\\hat\\theta_{mk} - \\theta_{mk}| .

Randomness: every trial derives its own Philox stream from
``SeedSequence(entropy=seed, spawn_key=(point_idx, trial_idx, lane))`` so
that tables are bit-identical across reruns and independent of execution
order (wall-clock columns excepted).
"""

from __future__ import annotations

import json
import math
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import scipy

from .builders import eta_from_sigma
from .extract import EstimateConfig, estimate
from .solver import SolveOptions
from .model import (
    ArraySpec,
    FrequencySet,
    Scenario,
    Source,
    doa_to_w,
    scenario_from_dict,
    synthesize,
)

SWEEP_AXES = ("snr_db", "k", "separation_deg", "scenario", "none")
METHODS = ("anm-fast", "anm-full", "anm-robust", "cbf")
DOA_RULES = ("fixed", "midline-pair", "uniform-continuous", "uniform-integer")
AMPLITUDE_RULES = ("gaussian", "flat")

#: Memoised estimator calls keyed by data bytes and estimator settings, so
#: deterministic repeated trials (e.g. noise-free flat-amplitude sweeps) are
#: solved once per distinct input.
_ESTIMATE_CACHE: dict = {}


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """A seeded Monte Carlo experiment specification.

    Attributes
    ----------
    name : str
        Label echoed into the manifest and file names.
    array : ArraySpec
        Sensor geometry shared by all trials (ignored by ``scenario`` sweeps,
        where each point carries its own scenario).
    multipliers : tuple of int
        Integer frequency multipliers.
    n_sources : int
        Source count ``K`` (overridden pointwise by a ``k`` sweep).
    snr_db : float or None
        Signal-to-noise ratio; ``None`` means noise-free (overridden
        pointwise by an ``snr_db`` sweep).
    method : str
        One of ``anm-fast``, ``anm-full``, ``anm-robust`` (full variant with
        noise/collision regularisers) or ``cbf``.
    eta : float or "auto"
        Noise-ball radius; ``"auto"`` derives it per trial from the realised
        noise level through :func:`wbanm.builders.eta_from_sigma`.
    lam : float
        Column-group regulariser weight.
    polish : bool
        Run the nonlinear least-squares refinement after root extraction.
    axis : str
        Sweep axis: one of ``snr_db``, ``k``, ``separation_deg``,
        ``scenario`` (values are full scenario dictionaries) or ``none``.
    values : tuple
        Sweep points (one table row each); for ``none`` a single row labeled
        0 is produced.
    n_trials : int
        Trials per sweep point.
    doa_rule : str
        ``fixed`` (use ``doas_deg``), ``midline-pair`` (``90 ± value`` for
        separation sweeps), ``uniform-continuous`` or ``uniform-integer``
        (degrees in [10, 170] with minimum separation
        ``min_separation_rad``).
    amplitude_rule : str
        ``gaussian`` (unit-norm complex normal rows, fresh per trial) or
        ``flat`` (deterministic ``1/sqrt(N_f)`` entries).
    doas_deg : tuple or None
        Fixed source angles for the ``fixed`` rule.
    min_separation_rad : float or None
        Minimum pairwise angular separation for the uniform rules, in
        radians; defaults to ``4 / n_sensors``.
    failure_threshold_deg : float
        Clamp applied to each per-source error before aggregation; a trial
        whose raw error reaches it counts as a failure.
    seed : int
        Root entropy for all trial streams.
    histogram_bin_deg : float or None
        When set, a histogram of all estimated angles is written with this
        bin width.
    compare_variants : bool
        Run both fast and full estimators per trial and record timing and
        agreement columns (fast results feed the error metrics).
    max_iter : int or None
        Solver iteration budget override. Closely spaced sources slow the
        convergence of the splitting solver considerably (the dual
        polynomial must develop near-degenerate double roots), so
        separation sweeps that probe the resolution limit need a budget
        well above the default.
    """

    name: str
    array: ArraySpec
    multipliers: tuple
    n_sources: int = 1
    snr_db: float | None = None
    method: str = "anm-fast"
    eta: float | str = 0.0
    lam: float = 0.0
    polish: bool = True
    axis: str = "none"
    values: tuple = (0,)
    n_trials: int = 100
    doa_rule: str = "fixed"
    amplitude_rule: str = "gaussian"
    doas_deg: tuple | None = None
    min_separation_rad: float | None = None
    failure_threshold_deg: float = 10.0
    seed: int = 0
    histogram_bin_deg: float | None = None
    compare_variants: bool = False
    max_iter: int | None = None

    def __post_init__(self) -> None:
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; expected one of {SWEEP_AXES}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.doa_rule not in DOA_RULES:
            raise ValueError(f"unknown doa rule {self.doa_rule!r}; expected one of {DOA_RULES}")
        if self.amplitude_rule not in AMPLITUDE_RULES:
            raise ValueError(
                f"unknown amplitude rule {self.amplitude_rule!r}; expected one of {AMPLITUDE_RULES}"
            )
        if self.n_trials < 1:
            raise ValueError(f"n_trials must be >= 1, got {self.n_trials}")
        if self.failure_threshold_deg <= 0:
            raise ValueError(
                f"failure threshold must be positive, got {self.failure_threshold_deg}"
            )
        if not isinstance(self.eta, str) and self.eta < 0:
            raise ValueError(f"eta must be nonnegative or 'auto', got {self.eta}")
        if isinstance(self.eta, str) and self.eta != "auto":
            raise ValueError(f"eta must be a number or 'auto', got {self.eta!r}")
        if len(self.values) < 1:
            raise ValueError("sweep needs at least one point")
        if self.doa_rule == "fixed" and self.axis != "scenario" and not self.doas_deg:
            raise ValueError("fixed doa rule requires doas_deg")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        object.__setattr__(self, "multipliers", tuple(int(f) for f in self.multipliers))
        object.__setattr__(self, "values", tuple(self.values))
        if self.doas_deg is not None:
            object.__setattr__(self, "doas_deg", tuple(float(t) for t in self.doas_deg))


def experiment_to_dict(config: ExperimentConfig) -> dict:
    """JSON-ready dictionary mirroring :func:`experiment_from_dict`."""
    return {
        "name": config.name,
        "array": {
            "n_sensors": config.array.n_sensors,
            "spacing_m": config.array.spacing_m,
            "speed_mps": config.array.speed_mps,
            "f0_hz": config.array.f0_hz,
        },
        "multipliers": list(config.multipliers),
        "n_sources": config.n_sources,
        "snr_db": config.snr_db,
        "method": config.method,
        "eta": config.eta,
        "lambda": config.lam,
        "polish": config.polish,
        "sweep": {"axis": config.axis, "values": list(config.values)},
        "n_trials": config.n_trials,
        "doa_rule": config.doa_rule,
        "amplitude_rule": config.amplitude_rule,
        "doas_deg": list(config.doas_deg) if config.doas_deg is not None else None,
        "min_separation_rad": config.min_separation_rad,
        "failure_threshold_deg": config.failure_threshold_deg,
        "seed": config.seed,
        "histogram_bin_deg": config.histogram_bin_deg,
        "compare_variants": config.compare_variants,
        "max_iter": config.max_iter,
    }


def experiment_from_dict(data: dict) -> ExperimentConfig:
    """Build an :class:`ExperimentConfig` from its JSON dictionary form."""
    arr = data["array"]
    sweep = data.get("sweep", {"axis": "none", "values": [0]})
    snr = data.get("snr_db")
    return ExperimentConfig(
        name=data.get("name", "experiment"),
        array=ArraySpec(
            n_sensors=int(arr["n_sensors"]),
            spacing_m=float(arr["spacing_m"]),
            speed_mps=float(arr.get("speed_mps", 340.0)),
            f0_hz=float(arr.get("f0_hz", 100.0)),
        ),
        multipliers=tuple(int(f) for f in data["multipliers"]),
        n_sources=int(data.get("n_sources", 1)),
        snr_db=None if snr in (None, "noise-free") else float(snr),
        method=data.get("method", "anm-fast"),
        eta=data.get("eta", 0.0),
        lam=float(data.get("lambda", data.get("lam", 0.0))),
        polish=bool(data.get("polish", True)),
        axis=sweep.get("axis", "none"),
        values=tuple(sweep.get("values", [0])),
        n_trials=int(data.get("n_trials", 100)),
        doa_rule=data.get("doa_rule", "fixed"),
        amplitude_rule=data.get("amplitude_rule", "gaussian"),
        doas_deg=tuple(data["doas_deg"]) if data.get("doas_deg") else None,
        min_separation_rad=data.get("min_separation_rad"),
        failure_threshold_deg=float(data.get("failure_threshold_deg", 10.0)),
        seed=int(data.get("seed", 0)),
        histogram_bin_deg=data.get("histogram_bin_deg"),
        compare_variants=bool(data.get("compare_variants", False)),
        max_iter=int(data["max_iter"]) if data.get("max_iter") else None,
    )


def load_experiment(path) -> ExperimentConfig:
    """Read an experiment configuration from a JSON file."""
    with open(path, encoding="utf-8") as fh:
        return experiment_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Error metrics
# ---------------------------------------------------------------------------


def match_errors(estimated_deg, true_deg, failure_threshold_deg: float):
    """Sorted matching of estimates to ground truth with a failure clamp.

    Both angle lists are sorted and paired elementwise; missing estimates are
    padded at the clamp value.  Returns the clamped per-source errors and a
    failure flag raised when any raw error reaches the threshold (including
    padding).

    Returns
    -------
    (numpy.ndarray, bool)
        Clamped absolute errors (one per true source) and the failure flag.
    """
    true_sorted = np.sort(np.asarray(true_deg, dtype=float))
    est = np.sort(np.asarray(estimated_deg, dtype=float)) if len(estimated_deg) else np.empty(0)
    errors = np.full(true_sorted.size, float("inf"))
    n = min(est.size, true_sorted.size)
    if n:
        errors[:n] = np.abs(est[:n] - true_sorted[:n])
    failed = bool(np.any(errors >= failure_threshold_deg))
    return np.minimum(errors, failure_threshold_deg), failed


def aggregate_errors(per_trial_errors) -> dict:
    """RMSE/MAE over a list of per-trial clamped error vectors."""
    sq_means = [float(np.mean(np.square(e))) for e in per_trial_errors]
    abs_means = [float(np.mean(e)) for e in per_trial_errors]
    return {
        "rmse": math.sqrt(float(np.mean(sq_means))),
        "mae": float(np.mean(abs_means)),
    }


# ---------------------------------------------------------------------------
# Conventional beamforming baseline
# ---------------------------------------------------------------------------


def cbf_spectrum(y: np.ndarray, grid_deg, array: ArraySpec, multipliers) -> np.ndarray:
    """Incoherent multi-frequency conventional beamformer power spectrum.

    .. math::

       P(\\theta) = \\frac{1}{N_m^2 N_f} \\sum_f
                    \\bigl| a(f, w(\\theta))^H y_f \\bigr|^2 .

    Parameters
    ----------
    y : numpy.ndarray
        ``(n_sensors, n_freqs)`` data matrix.
    grid_deg : array_like
        Sorted angle grid in degrees.
    array : ArraySpec
    multipliers : sequence of int
    """
    grid = np.asarray(grid_deg, dtype=float)
    w = doa_to_w(grid, array)
    m_idx = np.arange(y.shape[0])
    power = np.zeros(grid.size)
    for col, f in enumerate(multipliers):
        phases = np.exp(2j * np.pi * f * np.outer(w, m_idx))
        power += np.abs(phases @ y[:, col]) ** 2
    return power / (y.shape[0] ** 2 * len(multipliers))


def cbf_estimate(
    y: np.ndarray,
    k: int,
    array: ArraySpec,
    multipliers,
    grid_step_deg: float = 0.05,
    exclusion_deg: float = 2.0,
) -> list:
    """Greedy peak picking on the beamformer spectrum.

    The ``k`` largest spectrum values are taken one at a time, masking a
    ``±exclusion_deg`` neighbourhood around each accepted peak.
    """
    grid = np.arange(0.0, 180.0 + grid_step_deg / 2, grid_step_deg)
    power = cbf_spectrum(y, grid, array, multipliers).copy()
    picks = []
    for _ in range(k):
        idx = int(np.argmax(power))
        if not np.isfinite(power[idx]):
            break
        picks.append(float(grid[idx]))
        power[np.abs(grid - grid[idx]) <= exclusion_deg] = -np.inf
    return sorted(picks)


# ---------------------------------------------------------------------------
# Histograms
# ---------------------------------------------------------------------------


def histogram(estimates, bin_width_deg: float):
    """Fixed-width histogram of estimated angles over [0°, 180°].

    Parameters
    ----------
    estimates : list of lists
        Per-trial estimated angle lists (flattened internally).
    bin_width_deg : float
        Bin width; the last bin may extend past 180° when the width does not
        divide 180.

    Returns
    -------
    (numpy.ndarray, numpy.ndarray)
        Left bin edges and counts.
    """
    if bin_width_deg <= 0:
        raise ValueError(f"bin width must be positive, got {bin_width_deg}")
    flat = [t for trial in estimates for t in trial]
    n_bins = int(math.ceil(180.0 / bin_width_deg))
    edges = bin_width_deg * np.arange(n_bins + 1)
    counts, _ = np.histogram(np.asarray(flat, dtype=float), bins=edges)
    return edges[:-1], counts


def save_histogram(path, bin_left_deg, counts) -> None:
    """Write a histogram as delimited text with columns bin_left_deg, count."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_left_deg,count\n")
        for left, count in zip(bin_left_deg, counts):
            fh.write(f"{repr(float(left))},{int(count)}\n")


# ---------------------------------------------------------------------------
# Trial machinery
# ---------------------------------------------------------------------------


def _trial_rng(seed: int, point_idx: int, trial_idx: int, lane: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(point_idx, trial_idx, lane))
    return np.random.Generator(np.random.Philox(ss))


def _noise_seed(seed: int, point_idx: int, trial_idx: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(point_idx, trial_idx, 1))
    return int(ss.generate_state(1, np.uint64)[0])


def _draw_doas(config: ExperimentConfig, axis_value, k: int, rng) -> list:
    """Per-trial source angles according to the configured rule."""
    if config.doa_rule == "fixed":
        return list(config.doas_deg[:k])
    if config.doa_rule == "midline-pair":
        # Sweep value v places the pair at 90 - v and 90 + v degrees.
        offset = float(axis_value) if config.axis == "separation_deg" else 1.0
        return [90.0 - offset, 90.0 + offset]
    min_sep_rad = (
        config.min_separation_rad
        if config.min_separation_rad is not None
        else 4.0 / config.array.n_sensors
    )
    min_sep_deg = math.degrees(min_sep_rad)
    for _ in range(10_000):
        if config.doa_rule == "uniform-integer":
            cand = rng.integers(10, 171, size=k).astype(float)
        else:
            cand = rng.uniform(10.0, 170.0, size=k)
        cand = np.sort(cand)
        if k == 1 or np.min(np.diff(cand)) >= min_sep_deg:
            return [float(t) for t in cand]
    raise ValueError(
        f"could not draw {k} angles in [10, 170] with separation >= {min_sep_deg:.3f} deg"
    )


def _draw_amplitudes(config: ExperimentConfig, k: int, rng) -> np.ndarray:
    n_f = len(config.multipliers)
    if config.amplitude_rule == "flat":
        return np.full((k, n_f), 1.0 / math.sqrt(n_f), dtype=complex)
    x = rng.normal(size=(k, n_f)) + 1j * rng.normal(size=(k, n_f))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _trial_scenario(config: ExperimentConfig, axis_value, point_idx: int, trial_idx: int):
    """Materialise the seeded scenario of one trial."""
    if config.axis == "scenario":
        scenario = scenario_from_dict(axis_value)
        return replace(scenario, rng_seed=_noise_seed(config.seed, point_idx, trial_idx))
    k = int(axis_value) if config.axis == "k" else config.n_sources
    snr = float(axis_value) if config.axis == "snr_db" else config.snr_db
    rng = _trial_rng(config.seed, point_idx, trial_idx, lane=0)
    doas = _draw_doas(config, axis_value, k, rng)
    amps = _draw_amplitudes(config, k, rng)
    sources = [Source(theta_deg=doas[j], amplitude_vec=amps[j]) for j in range(k)]
    return Scenario(
        array=config.array,
        freqs=FrequencySet(config.multipliers),
        sources=sources,
        snr_db=snr,
        rng_seed=_noise_seed(config.seed, point_idx, trial_idx),
    )


def _resolve_eta(config: ExperimentConfig, synthesis) -> float:
    if config.eta != "auto":
        return float(config.eta)
    noise = synthesis.noise
    if not np.any(noise):
        return 0.0
    sigma_hat = float(np.linalg.norm(noise)) / math.sqrt(noise.size)
    return eta_from_sigma(sigma_hat, noise.shape[0], noise.shape[1])


def _cached_estimate(y: np.ndarray, multipliers, est_config: EstimateConfig):
    """Estimator call memoised on the exact data bytes and settings."""
    key = (
        y.tobytes(),
        tuple(multipliers),
        est_config.variant,
        est_config.k,
        est_config.eta,
        est_config.lam,
        est_config.polish,
        est_config.solve_options.max_iter if est_config.solve_options else None,
        est_config.array.n_sensors,
        est_config.array.spacing_m,
        est_config.array.f0_hz,
        est_config.array.speed_mps,
    )
    hit = _ESTIMATE_CACHE.get(key)
    if hit is None:
        hit = estimate(y, multipliers, est_config)
        _ESTIMATE_CACHE[key] = hit
    return hit


def run_trial(config: ExperimentConfig, axis_value, point_idx: int, trial_idx: int) -> dict:
    """Run one seeded trial and return its outcome record.

    The record carries the true and estimated angles, the clamped per-source
    errors, the failure flag, the wall time of the estimation call, and (in
    ``compare_variants`` mode) the full-variant timing and agreement fields.
    Estimation problems never propagate exceptions; they are recorded as
    failed trials with all errors clamped.
    """
    scenario = _trial_scenario(config, axis_value, point_idx, trial_idx)
    synthesis = synthesize(scenario)
    true_deg = sorted(s.theta_deg for s in scenario.sources)
    k = len(true_deg)
    record = {
        "point_idx": point_idx,
        "trial_idx": trial_idx,
        "true_deg": true_deg,
        "estimated_deg": [],
        "status": "ok",
        "wall_ms": 0.0,
    }
    multipliers = scenario.freqs.multipliers
    array = scenario.array
    try:
        if config.method == "cbf":
            start = time.perf_counter()
            record["estimated_deg"] = cbf_estimate(synthesis.y, k, array, multipliers)
            record["wall_ms"] = 1e3 * (time.perf_counter() - start)
        else:
            variant = "fast" if config.method == "anm-fast" else "full"
            solve_options = (
                SolveOptions(max_iter=config.max_iter)
                if config.max_iter is not None
                else SolveOptions()
            )
            est_config = EstimateConfig(
                k=k,
                array=array,
                variant=variant,
                eta=_resolve_eta(config, synthesis),
                lam=config.lam,
                polish=config.polish,
                solve_options=solve_options,
            )
            report = _cached_estimate(synthesis.y, multipliers, est_config)
            record["estimated_deg"] = list(report.doas_deg)
            record["status"] = report.status
            record["wall_ms"] = report.wall_ms
            if config.compare_variants:
                full_report = _cached_estimate(
                    synthesis.y, multipliers, replace(est_config, variant="full")
                )
                fast_sorted = np.sort(report.doas_deg)
                full_sorted = np.sort(full_report.doas_deg)
                record["wall_ms_full"] = full_report.wall_ms
                record["n_poly"] = scenario.freqs.poly_order(array.n_sensors)
                record["n_support"] = len(scenario.freqs.support_set(array.n_sensors))
                record["max_doa_diff_deg"] = (
                    float(np.max(np.abs(fast_sorted - full_sorted)))
                    if fast_sorted.size == full_sorted.size
                    else float("inf")
                )
    except Exception as exc:  # estimation failures never abort a sweep
        record["status"] = f"error: {exc}"
        record["estimated_deg"] = []
    errors, failed = match_errors(
        record["estimated_deg"], true_deg, config.failure_threshold_deg
    )
    if record["status"] not in ("ok",):
        failed = True
        errors = np.full(k, config.failure_threshold_deg)
    record["errors_deg"] = [float(e) for e in errors]
    record["failed"] = failed
    return record


def _trial_worker(payload):
    config_dict, axis_value, point_idx, trial_idx = payload
    config = experiment_from_dict(config_dict)
    return run_trial(config, axis_value, point_idx, trial_idx)


# ---------------------------------------------------------------------------
# Sweep runner and outputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MonteCarloTable:
    """Aggregated sweep results plus the per-trial records that formed them."""

    config: ExperimentConfig
    points: tuple  # one dict per sweep point
    records: tuple  # one tuple of trial records per sweep point

    def point_labels(self) -> list:
        if self.config.axis == "scenario":
            return list(range(len(self.config.values)))
        if self.config.axis == "none":
            return [0]
        return [float(v) for v in self.config.values]


def run_monte_carlo(config: ExperimentConfig, threads: int = 1) -> MonteCarloTable:
    """Run the configured sweep and aggregate RMSE/MAE/failure statistics.

    Trials are independent and may run in a process pool (``threads > 1``);
    aggregation always happens in trial order after collection, so the
    resulting table is identical either way.
    """
    points = []
    all_records = []
    labels = (
        list(range(len(config.values)))
        if config.axis == "scenario"
        else ([0] if config.axis == "none" else list(config.values))
    )
    for point_idx, axis_value in enumerate(config.values):
        if threads > 1:
            payloads = [
                (experiment_to_dict(config), axis_value, point_idx, t)
                for t in range(config.n_trials)
            ]
            with ProcessPoolExecutor(max_workers=threads) as pool:
                records = list(pool.map(_trial_worker, payloads))
        else:
            records = [
                run_trial(config, axis_value, point_idx, t) for t in range(config.n_trials)
            ]
        records.sort(key=lambda r: r["trial_idx"])
        stats = aggregate_errors([r["errors_deg"] for r in records])
        row = {
            "point": labels[point_idx],
            "rmse": stats["rmse"],
            "mae": stats["mae"],
            "failures": sum(1 for r in records if r["failed"]),
            "wall_ms": float(np.mean([r["wall_ms"] for r in records])),
        }
        if config.compare_variants:
            row["wall_ms_full"] = float(
                np.mean([r.get("wall_ms_full", float("nan")) for r in records])
            )
            row["n_poly"] = records[0].get("n_poly")
            row["n_support"] = records[0].get("n_support")
            row["block_ratio"] = (
                row["n_poly"] / row["n_support"] if row.get("n_support") else None
            )
            row["max_doa_diff_deg"] = max(
                r.get("max_doa_diff_deg", float("inf")) for r in records
            )
        points.append(row)
        all_records.append(tuple(records))
    return MonteCarloTable(config=config, points=tuple(points), records=tuple(all_records))


def _git_describe() -> str | None:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.TimeoutExpired):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


def build_manifest(config: ExperimentConfig) -> dict:
    """Manifest echoing the configuration plus build provenance."""
    return {
        "config": experiment_to_dict(config),
        "seed": config.seed,
        "git": _git_describe(),
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def save_sweep(path, table: MonteCarloTable) -> None:
    """Write the aggregated sweep as delimited text.

    Base columns: ``point,rmse,mae,failures,wall_ms``; variant-comparison
    sweeps additionally carry ``wall_ms_full,n_poly,n_support,block_ratio,``
    ``max_doa_diff_deg``.
    """
    base = ["point", "rmse", "mae", "failures", "wall_ms"]
    extra = (
        ["wall_ms_full", "n_poly", "n_support", "block_ratio", "max_doa_diff_deg"]
        if table.config.compare_variants
        else []
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(base + extra) + "\n")
        for row in table.points:
            cells = [
                repr(float(row["point"])),
                repr(float(row["rmse"])),
                repr(float(row["mae"])),
                str(int(row["failures"])),
                repr(float(row["wall_ms"])),
            ]
            for name in extra:
                value = row.get(name)
                if name in ("n_poly", "n_support"):
                    cells.append(str(int(value)))
                else:
                    cells.append(repr(float(value)))
            fh.write(",".join(cells) + "\n")


def save_estimates(path, table: MonteCarloTable) -> None:
    """Write every per-trial estimate: point,trial,source,theta_deg,status."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("point,trial,source,theta_deg,status\n")
        labels = table.point_labels()
        for point_idx, records in enumerate(table.records):
            for record in records:
                for source_idx, theta in enumerate(record["estimated_deg"]):
                    fh.write(
                        f"{repr(float(labels[point_idx]))},{record['trial_idx']},"
                        f"{source_idx},{repr(float(theta))},{record['status']}\n"
                    )


def write_outputs(table: MonteCarloTable, out_dir) -> list:
    """Write sweep, manifest, estimates and optional histogram files.

    Returns the list of written paths.  File names are prefixed with the
    experiment name: ``<name>_sweep.csv``, ``<name>_manifest.json``,
    ``<name>_estimates.csv`` and ``<name>_histogram.csv``.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    name = table.config.name
    written = []
    sweep_path = os.path.join(out_dir, f"{name}_sweep.csv")
    save_sweep(sweep_path, table)
    written.append(sweep_path)
    manifest_path = os.path.join(out_dir, f"{name}_manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(build_manifest(table.config), fh, indent=2)
        fh.write("\n")
    written.append(manifest_path)
    estimates_path = os.path.join(out_dir, f"{name}_estimates.csv")
    save_estimates(estimates_path, table)
    written.append(estimates_path)
    if table.config.histogram_bin_deg:
        all_estimates = [
            record["estimated_deg"] for records in table.records for record in records
        ]
        lefts, counts = histogram(all_estimates, table.config.histogram_bin_deg)
        histogram_path = os.path.join(out_dir, f"{name}_histogram.csv")
        save_histogram(histogram_path, lefts, counts)
        written.append(histogram_path)
    return written
