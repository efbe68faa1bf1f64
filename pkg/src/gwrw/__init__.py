"""Biased random walks on supercritical Galton-Watson trees with leaves.

Library layout:

* :mod:`gwrw.offspring` -- exact numerics for the offspring law.
* :mod:`gwrw.environment` -- lazy backbone/bud/trap tree growth.
* :mod:`gwrw.walk` -- the biased walk engine and its instrumentation.
* :mod:`gwrw.trap` -- bottom-up height-conditioned traps and excursion laws.
* :mod:`gwrw.limitlaw` -- the closed-form limit objects and their evaluators.
* :mod:`gwrw.iidsum` -- generic heavy-tailed triangular-array harness.
* :mod:`gwrw.harness` -- experiment suites, statistics, parallel driver.
"""

from .offspring import (
    DerivedParams,
    OffspringLaw,
    derive_params,
    offspring_law,
    reference_law,
)

__all__ = [
    "DerivedParams",
    "OffspringLaw",
    "derive_params",
    "offspring_law",
    "reference_law",
]

__version__ = "0.1.0"
