"""Gridless multi-frequency DOA estimation via atomic norm minimization.

The package is organized around the estimation pipeline:

``model``
    ULA signal synthesis, DOA conversions, and the R / R* index maps.
``solver``
    An operator-splitting solver for the single-PSD-block SDPs built here.
``builders``
    The four SDP variants (full, robust, fast, dual) over a data matrix.
``extract``
    Dual-polynomial evaluation, unit-circle rooting, DOA and amplitude
    recovery (the end-to-end ``estimate`` entry point).
``certificate``
    Squared-Fejer kernels, interpolation certificates, and the
    collision/aliasing analytics.
``evaluation``
    Monte Carlo harness, beamforming baseline, histograms.
``cli``
    The ``wbanm`` command-line interface.
"""

from wbanm.model import (
    ArraySpec,
    FrequencySet,
    Scenario,
    Source,
    doa_to_w,
    frequency_support_set,
    map_R,
    map_R_adjoint,
    steering_vector,
    synthesize,
    z_angle_to_theta,
)

__all__ = [
    "ArraySpec",
    "FrequencySet",
    "Scenario",
    "Source",
    "doa_to_w",
    "frequency_support_set",
    "map_R",
    "map_R_adjoint",
    "steering_vector",
    "synthesize",
    "z_angle_to_theta",
]

__version__ = "0.1.0"
