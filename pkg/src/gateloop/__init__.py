"""Gated linear recurrence (data-controlled state transitions): kernels,
toy model, synthetic benchmark and verification harness."""

from . import diffmodes, memhorizon, model, modes, numerics, reference, scan

__all__ = ["diffmodes", "memhorizon", "model", "modes", "numerics",
           "reference", "scan"]

__version__ = "0.1.0"
