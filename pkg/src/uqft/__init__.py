"""Wightman-functional kernels for a massive scalar field with non-Gaussian connected terms.

Modules: ``combinatorics`` (pairings, partitions, energy orderings),
``algebra`` (packets and function sequences), ``kernel`` (symbolic W_n),
``quad`` (numerical shell integrals), ``gram`` (pairings and positivity),
``scatter`` (finite-width amplitudes) and ``cli``.
"""
__version__ = "0.1.0"

from .algebra import FunctionSequence, GaussianPacket, Kinematics, lsz_packet, star
from .kernel import MomentMeasure, TermList, assemble_W, reduce_for_B, render_W
from .quad import AmplitudeReport, ConvergenceError, QuadConfig

__all__ = [
    "AmplitudeReport",
    "ConvergenceError",
    "FunctionSequence",
    "GaussianPacket",
    "Kinematics",
    "MomentMeasure",
    "QuadConfig",
    "TermList",
    "assemble_W",
    "lsz_packet",
    "reduce_for_B",
    "render_W",
    "star",
    "__version__",
]
