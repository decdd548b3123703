"""Generalized linear-quadratic optimal control at finite dimension:
Riccati equations, optimal and adjoint steady states, explicit feedback
solutions checked against a direct-transcription oracle, and measurement
of the exponential turnpike property."""

import os as _os

# TURNPIKE_THREADS caps BLAS threads; it only takes effect if set before numpy loads
if _os.environ.get("TURNPIKE_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["TURNPIKE_THREADS"])

from .errors import (CoercivityError, DimensionError, GenerationExhausted, HypothesesFail,
                     InsufficientDecay, NewtonStalled, NonFiniteEncountered, NotDetectable,
                     NotStabilizable, NumericalError, SingularKKT, StepSizeTooLarge,
                     TurnpikeLabError, ValidationError)
from .lti_core import GenLQProblem, OcpInstance, adjoint, equilibrium_residual, running_cost

__version__ = "0.1.0"
