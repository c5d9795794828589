"""romforge: non-intrusive reduced-order models for steady parameterized PDEs.

Two surrogate families over full-order snapshot data:

* POD-GPR: truncated-SVD basis plus one Gaussian process per expansion
  coefficient.
* CAE-GPR: convolutional-autoencoder manifold plus one Gaussian process per
  code component.

A built-in lid-driven-cavity solver generates ground-truth snapshots, and
``romforge.cli`` wires the offline/online workflow into a command line.
"""

from . import cavity, gpr, io, nn, pipeline, pod
from .errors import (
    ConvergenceError,
    DataError,
    DegenerateSpectrumError,
    FormatError,
    IllConditionedKernelError,
    RomforgeError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "cavity",
    "gpr",
    "io",
    "nn",
    "pipeline",
    "pod",
    "ConvergenceError",
    "DataError",
    "DegenerateSpectrumError",
    "FormatError",
    "IllConditionedKernelError",
    "RomforgeError",
    "TrainingError",
    "__version__",
]
