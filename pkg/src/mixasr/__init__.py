"""Multi-speaker acoustic modeling over an explicit mask-based separator.

Desk-scale toolkit: synthetic labeled mixtures, a BLSTM mask separator
trained with permutation-invariant SDR loss, a family of acoustic-model
encoder compositions (separation / mixture / mixture-aware / combination),
and the three-phase training pipeline tying them together.
"""

from .kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
