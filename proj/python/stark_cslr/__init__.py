"""Keypoint-based continuous sign language recognition toolkit.

Thin Python surface over the C++ core: losses (CTC, distillation),
decoding (greedy, prefix beam search), WER metrics, synthetic corpus
generation, dataset/checkpoint I/O, the four-stream model, and the
finite-difference gradient checker.
"""

try:
    # Installed layout: the extension lives inside the package.
    from ._core import *  # noqa: F401,F403
    from . import _core as _impl
except ImportError:
    # Development tree: the extension is on PYTHONPATH from the build dir.
    from _core import *  # noqa: F401,F403
    import _core as _impl

__version__ = "0.1.0"
__all__ = sorted(n for n in dir(_impl) if not n.startswith("_"))
