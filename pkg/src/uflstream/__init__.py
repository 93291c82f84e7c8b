"""Streaming cost estimation for Euclidean uniform facility location.

Points arrive as a dynamic stream of insertions and deletions on the integer
grid [1, delta]^d.  The package provides an offline oracle (per-point opening
radii, the Mettu-Plaxton scan, exact candidate-restricted optima), consistent
geometric hashing schemes, linear-sketch primitives, and the streaming cost
estimators built from them, plus instance generators and a CLI.
"""

from .core import GridPoint, RealPoint, Stream, StreamUpdate, UflInstance, distance

__all__ = [
    "GridPoint",
    "RealPoint",
    "Stream",
    "StreamUpdate",
    "UflInstance",
    "distance",
]

__version__ = "0.1.0"
