"""Signal model for a uniform linear array observed at harmonic frequencies.

A ULA with ``n_sensors`` elements at spacing ``d`` receives narrowband
snapshots at frequencies ``F_j * f0`` for a set of positive integer
multipliers ``F_1 < ... < F_{N_f}``.  A far-field source at angle
``theta`` (degrees, measured from endfire so broadside is 90) enters
through the scaled DOA

    w = f0 * d * cos(theta) / c,           w in [-f0*d/c, f0*d/c],

and the manifold vector at multiplier ``f`` is

    a(f, w)[m] = exp(-2j*pi*w*f*m),        m = 0..n_sensors-1,

so the first entry is exactly 1.  The noise-free data matrix collects one
column per frequency,

    X = sum_k c_k * [x_k(1)*a(F_1, w_k) | ... | x_k(N_f)*a(F_Nf, w_k)],

with nonnegative gains ``c_k`` and unit-norm per-frequency amplitude
vectors ``x_k``.  Observations are ``Y = X + W`` where the complex
Gaussian noise draw is rescaled so that

    SNR = 20*log10(||X||_F / ||W||_F)

holds exactly for the realized matrices.

Columns of X embed into a single length-``N`` harmonic grid with
``N = F_max*(n_sensors-1) + 1``: column j of X samples a degree-(N-1)
exponential at exponents ``F_j * m``.  The selection map R and its
adjoint R* move between the N-row "full" coordinates and the
n_sensors-row data coordinates; they are the only index-sensitive code
in the package (everything downstream is 0-based).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArraySpec:
    """Uniform linear array geometry and the fundamental frequency.

    The spacing must satisfy ``spacing_m <= speed_mps / (2 * f0_hz)`` so the
    base frequency is free of spatial aliasing; higher multipliers may still
    alias (see :func:`wbanm.certificate.aliasing_present`).
    """

    n_sensors: int
    spacing_m: float
    speed_mps: float = 340.0
    f0_hz: float = 100.0

    def __post_init__(self):
        if self.n_sensors < 2:
            raise ValueError("n_sensors must be at least 2")
        if self.spacing_m <= 0:
            raise ValueError("spacing_m must be positive")
        half_wavelength = self.speed_mps / (2.0 * self.f0_hz)
        if self.spacing_m > half_wavelength * (1 + 1e-12):
            raise ValueError(
                f"spacing_m={self.spacing_m} exceeds c/(2*f0)={half_wavelength}"
            )

    @property
    def w_max(self) -> float:
        """Half-width of the scaled-DOA interval, f0*d/c (= 1/2 at critical spacing)."""
        return self.f0_hz * self.spacing_m / self.speed_mps


@dataclass(frozen=True)
class FrequencySet:
    """Strictly increasing positive integer multipliers of the fundamental."""

    multipliers: tuple

    def __post_init__(self):
        mult = tuple(int(f) for f in self.multipliers)
        if len(mult) == 0:
            raise ValueError("at least one frequency multiplier is required")
        if any(f < 1 for f in mult):
            raise ValueError("multipliers must be positive integers")
        if any(b <= a for a, b in zip(mult, mult[1:])):
            raise ValueError("multipliers must be strictly increasing")
        object.__setattr__(self, "multipliers", mult)

    @property
    def n_freqs(self) -> int:
        return len(self.multipliers)

    @property
    def f_max(self) -> int:
        return self.multipliers[-1]

    def poly_order(self, n_sensors: int) -> int:
        """Number of rows N = f_max*(n_sensors-1) + 1 of the full lifted grid."""
        return self.f_max * (n_sensors - 1) + 1

    def support_set(self, n_sensors: int) -> np.ndarray:
        """Sorted distinct exponents {m*f} reachable by the array (see
        :func:`frequency_support_set`)."""
        return frequency_support_set(n_sensors, self.multipliers)


@dataclass(frozen=True)
class Source:
    """One far-field source: DOA in degrees, per-frequency amplitudes, gain.

    ``amplitude_vec`` is normalized to unit 2-norm at construction; any norm
    it carried is folded into ``gain`` so the synthesized contribution is
    unchanged.  ``gain`` must end up nonnegative real.
    """

    theta_deg: float
    amplitude_vec: np.ndarray
    gain: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.theta_deg <= 180.0):
            raise ValueError(f"theta_deg={self.theta_deg} outside [0, 180]")
        amp = np.asarray(self.amplitude_vec, dtype=complex).ravel()
        norm = float(np.linalg.norm(amp))
        if norm == 0.0:
            raise ValueError("amplitude_vec must be nonzero")
        gain = float(self.gain) * norm
        if gain < 0:
            raise ValueError("gain must be nonnegative")
        amp = amp / norm
        amp.flags.writeable = False
        object.__setattr__(self, "amplitude_vec", amp)
        object.__setattr__(self, "gain", gain)


@dataclass(frozen=True)
class Scenario:
    """Ground truth for one synthetic trial.

    ``snr_db = None`` means noise-free (Y = X bit-exact); otherwise the noise
    realization is rescaled so the realized Frobenius-norm SNR equals
    ``snr_db`` exactly.
    """

    array: ArraySpec
    freqs: FrequencySet
    sources: tuple
    snr_db: float | None = None
    rng_seed: int = 0

    def __post_init__(self):
        sources = tuple(self.sources)
        if len(sources) == 0:
            raise ValueError("scenario needs at least one source")
        for s in sources:
            if len(s.amplitude_vec) != self.freqs.n_freqs:
                raise ValueError(
                    f"source amplitude length {len(s.amplitude_vec)} != "
                    f"{self.freqs.n_freqs} frequencies"
                )
        ws = [doa_to_w(s.theta_deg, self.array) for s in sources]
        if len(set(np.round(ws, 15))) != len(ws):
            raise ValueError("source scaled DOAs must be distinct")
        object.__setattr__(self, "sources", sources)

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    def source_ws(self) -> np.ndarray:
        """Scaled DOAs of the sources, in source order."""
        return np.array([doa_to_w(s.theta_deg, self.array) for s in self.sources])


@dataclass(frozen=True)
class SynthesisResult:
    """Output of :func:`synthesize`: data ``y = x + noise`` plus the echo."""

    y: np.ndarray
    x: np.ndarray
    noise: np.ndarray
    scenario: Scenario


# ---------------------------------------------------------------------------
# DOA coordinate maps
# ---------------------------------------------------------------------------


def doa_to_w(theta_deg, array: ArraySpec):
    """Scaled DOA w = f0*d*cos(theta)/c; monotone decreasing on [0, 180].

    Accepts a scalar or an array of angles; the return type follows the
    input (float for scalars, ndarray otherwise).
    """
    theta = np.asarray(theta_deg, dtype=float)
    if np.any(theta < 0.0) or np.any(theta > 180.0):
        raise ValueError(f"theta_deg={theta_deg} outside [0, 180]")
    w = array.w_max * np.cos(np.deg2rad(theta))
    if np.ndim(theta_deg) == 0:
        return float(w)
    return w


def z_angle_to_theta(angle_rad: float, array: ArraySpec) -> float:
    """DOA (degrees) from the phase of a base-frequency unit root z = e^{-2j*pi*w}.

    Inverts ``w -> angle(z(w))`` composed with :func:`doa_to_w`:

        theta = pi - arccos(angle / (2*pi*f0*d/c)).

    The arccos argument is clamped within a 1e-9 slack; beyond that the
    angle does not correspond to a physical DOA and a ``ValueError`` is
    raised.
    """
    u = angle_rad / (2.0 * np.pi * array.w_max)
    if abs(u) > 1.0 + 1e-9:
        raise ValueError(f"phase angle {angle_rad} outside the visible region")
    u = min(1.0, max(-1.0, u))
    return float(np.rad2deg(np.pi - np.arccos(u)))


def steering_vector(f: int, w: float, n_sensors: int) -> np.ndarray:
    """Manifold vector a(f, w)[m] = exp(-2j*pi*w*f*m), m = 0..n_sensors-1."""
    if f < 1:
        raise ValueError("frequency multiplier must be >= 1")
    return np.exp(-2j * np.pi * w * f * np.arange(n_sensors))


def steering_matrix(w: float, multipliers, n_sensors: int) -> np.ndarray:
    """Stack a(f, w) for each multiplier into an n_sensors x n_freqs matrix."""
    return np.stack(
        [steering_vector(f, w, n_sensors) for f in multipliers], axis=1
    )


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------


def synthesize(scenario: Scenario) -> SynthesisResult:
    """Draw one data matrix Y = X + W from a scenario.

    X sums the per-source rank-one-in-each-column atoms
    ``gain * amplitude_vec[j] * a(F_j, w)``.  For finite ``snr_db`` the
    noise is drawn i.i.d. circular complex Gaussian from a counter-based
    generator seeded with ``rng_seed`` and then rescaled so

        20*log10(||X||_F / ||W||_F) = snr_db

    holds exactly for the realized draw.  ``snr_db = None`` returns
    ``y = x`` with a zero noise matrix.
    """
    arr, freqs = scenario.array, scenario.freqs
    n_m, n_f = arr.n_sensors, freqs.n_freqs
    x = np.zeros((n_m, n_f), dtype=complex)
    for src in scenario.sources:
        w = doa_to_w(src.theta_deg, arr)
        x += src.gain * steering_matrix(w, freqs.multipliers, n_m) * src.amplitude_vec
    if scenario.snr_db is None:
        noise = np.zeros_like(x)
    else:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(scenario.rng_seed)))
        draw = (rng.standard_normal((n_m, n_f)) + 1j * rng.standard_normal((n_m, n_f)))
        draw /= np.sqrt(2.0)
        target = np.linalg.norm(x) * 10.0 ** (-scenario.snr_db / 20.0)
        noise = draw * (target / np.linalg.norm(draw))
    return SynthesisResult(y=x + noise, x=x, noise=noise, scenario=scenario)


# ---------------------------------------------------------------------------
# Selection map R and its adjoint
# ---------------------------------------------------------------------------


def _resolve_multipliers(n_cols, multipliers):
    if multipliers is None:
        return tuple(range(1, n_cols + 1))
    mult = tuple(int(f) for f in multipliers)
    if len(mult) != n_cols:
        raise ValueError(f"{len(mult)} multipliers for {n_cols} columns")
    return mult


def map_R(full: np.ndarray, multipliers=None) -> np.ndarray:
    """Per-column decimation from the N-row harmonic grid to the array.

    Column j of the output keeps the entries of column j of ``full`` at
    exponents ``F_j * m`` for m = 0..n_sensors-1, where
    ``N = F_max*(n_sensors-1) + 1``.  With ``multipliers=None`` the columns
    are taken at the consecutive set 1..n_cols.  Satisfies
    ``map_R(Z(w)) = A(w)`` when every column of Z samples z(w) on 0..N-1.
    """
    full = np.asarray(full)
    n, n_cols = full.shape
    mult = _resolve_multipliers(n_cols, multipliers)
    f_max = max(mult)
    if (n - 1) % f_max != 0:
        raise ValueError(f"{n} rows do not fit f_max={f_max}: need f_max*(n_sensors-1)+1")
    n_sensors = (n - 1) // f_max + 1
    out = np.empty((n_sensors, n_cols), dtype=full.dtype)
    m = np.arange(n_sensors)
    for j, f in enumerate(mult):
        out[:, j] = full[f * m, j]
    return out


def map_R_adjoint(q: np.ndarray, multipliers=None) -> np.ndarray:
    """Adjoint of :func:`map_R`: scatter columns back to the N-row grid.

    ``out[F_j * m, j] = q[m, j]`` with every other entry exactly zero, so
    ``map_R(map_R_adjoint(q)) = q`` and <map_R(H), Q> = <H, map_R_adjoint(Q)>
    for the real trace inner product.
    """
    q = np.asarray(q)
    n_sensors, n_cols = q.shape
    mult = _resolve_multipliers(n_cols, multipliers)
    n = max(mult) * (n_sensors - 1) + 1
    out = np.zeros((n, n_cols), dtype=complex)
    m = np.arange(n_sensors)
    for j, f in enumerate(mult):
        out[f * m, j] = q[:, j]
    return out


def frequency_support_set(n_sensors: int, multipliers) -> np.ndarray:
    """Sorted distinct exponents U = {m*f : 0 <= m < n_sensors, f a multiplier}.

    The reduced SDP block indexes its rows by U; its cardinality N_u is at
    most N = f_max*(n_sensors-1)+1 with equality iff there is one multiplier.
    """
    mults = np.asarray(list(multipliers), dtype=int)
    grid = np.arange(n_sensors)[:, None] * mults[None, :]
    return np.unique(grid)


def h_support_mask(n_sensors: int, multipliers) -> np.ndarray:
    """Boolean N x N_f mask of the range of :func:`map_R_adjoint`.

    Entry (e, j) is True iff F_j divides e and e/F_j <= n_sensors-1, i.e.
    exponent e is one of the rows column j actually samples.
    """
    mult = tuple(int(f) for f in multipliers)
    n = max(mult) * (n_sensors - 1) + 1
    e = np.arange(n)[:, None]
    f = np.asarray(mult)[None, :]
    return (e % f == 0) & (e // f <= n_sensors - 1)


def h_support_mask_reduced(n_sensors: int, multipliers):
    """Support mask in reduced coordinates: rows indexed by U.

    Returns ``(u, mask)`` where ``u`` is the sorted support set and ``mask``
    is the boolean N_u x N_f matrix with (r, j) True iff exponent u[r] is
    sampled by column j.  A row may serve several columns.
    """
    u = frequency_support_set(n_sensors, multipliers)
    full = h_support_mask(n_sensors, multipliers)
    return u, full[u, :]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "array": {
            "n_sensors": scenario.array.n_sensors,
            "spacing_m": scenario.array.spacing_m,
            "speed_mps": scenario.array.speed_mps,
            "f0_hz": scenario.array.f0_hz,
        },
        "freqs": {"multipliers": list(scenario.freqs.multipliers)},
        "sources": [
            {
                "theta_deg": s.theta_deg,
                "amplitude": [
                    {"re": float(a.real), "im": float(a.imag)} for a in s.amplitude_vec
                ],
                "gain": s.gain,
            }
            for s in scenario.sources
        ],
        "snr_db": scenario.snr_db,
        "seed": scenario.rng_seed,
    }


def scenario_from_dict(data: dict) -> Scenario:
    arr = data["array"]
    array = ArraySpec(
        n_sensors=int(arr["n_sensors"]),
        spacing_m=float(arr["spacing_m"]),
        speed_mps=float(arr.get("speed_mps", 340.0)),
        f0_hz=float(arr.get("f0_hz", 100.0)),
    )
    freqs = FrequencySet(tuple(data["freqs"]["multipliers"]))
    sources = []
    for s in data["sources"]:
        amp = np.array([complex(a["re"], a["im"]) for a in s["amplitude"]])
        sources.append(
            Source(
                theta_deg=float(s["theta_deg"]),
                amplitude_vec=amp,
                gain=float(s.get("gain", 1.0)),
            )
        )
    snr = data.get("snr_db")
    if isinstance(snr, str):
        if snr != "noise-free":
            raise ValueError(f"unrecognized snr_db value {snr!r}")
        snr = None
    return Scenario(
        array=array,
        freqs=freqs,
        sources=tuple(sources),
        snr_db=None if snr is None else float(snr),
        rng_seed=int(data.get("seed", 0)),
    )


def save_scenario(path, scenario: Scenario):
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_data_matrix(path, y: np.ndarray, multipliers):
    """Write a data matrix as CSV rows ``sensor,freq,re,im`` (row-major).

    ``freq`` holds the integer multiplier, so the file is self-describing:
    the loader recovers both the sensor count and the frequency set.
    """
    y = np.asarray(y)
    mult = tuple(int(f) for f in multipliers)
    if y.shape[1] != len(mult):
        raise ValueError(f"{y.shape[1]} columns != {len(mult)} multipliers")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sensor", "freq", "re", "im"])
        for m in range(y.shape[0]):
            for j, f in enumerate(mult):
                writer.writerow([m, f, repr(float(y[m, j].real)), repr(float(y[m, j].imag))])


def load_data_matrix(path):
    """Read a ``sensor,freq,re,im`` CSV back into (matrix, multipliers)."""
    entries = {}
    mult_order = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"sensor", "freq", "re", "im"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"expected CSV header with columns {sorted(required)}")
        for row in reader:
            m, f = int(row["sensor"]), int(row["freq"])
            entries[(m, f)] = complex(float(row["re"]), float(row["im"]))
            if m == 0:
                mult_order.append(f)
    if not entries:
        raise ValueError("empty data matrix file")
    n_sensors = max(m for m, _ in entries) + 1
    mult = tuple(mult_order)
    if len(set(mult)) != len(mult):
        raise ValueError("duplicate frequency multipliers in data file")
    y = np.empty((n_sensors, len(mult)), dtype=complex)
    for m in range(n_sensors):
        for j, f in enumerate(mult):
            try:
                y[m, j] = entries[(m, f)]
            except KeyError:
                raise ValueError(f"missing entry sensor={m} freq={f}") from None
    return y, mult
