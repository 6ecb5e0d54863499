"""Numerical core: fused training kernels plus a reference autodiff graph.

``kernels`` is the compiled extension when it is importable, else the numpy
fallback. Set ``MWAD_KERNELS=python`` to force the fallback.
"""
import os

from . import _kernels_py


def _select():
    if os.environ.get("MWAD_KERNELS", "").lower() == "python":
        return _kernels_py
    try:
        from . import _kernels
    except ImportError:
        return _kernels_py
    return _kernels


kernels = _select()
BACKEND = kernels.NAME

from .graph import Graph, Node  # noqa: E402
from .gradcheck import GradCheckReport, grad_check, check_function  # noqa: E402

__all__ = ["kernels", "BACKEND", "Graph", "Node", "GradCheckReport", "grad_check", "check_function"]
