"""Descriptive inference from non-probability samples."""

from .errors import NonProbError
from .popgen import (
    Design,
    DgpSpec,
    NonProbSample,
    Population,
    ProbSample,
    draw_b_sample,
    draw_s_sample,
    generate_population,
)

__version__ = "0.1.0"
