"""Kernel backend selection.

The compiled extension is used when it imported cleanly; otherwise the numpy
fallback takes over. Set CREDLENS_PURE_PYTHON=1 to force the fallback. Both
backends produce bit-identical results (see tests/test_kernels.py), so the
choice only affects speed.
"""
import os

from . import _pykernels

if os.environ.get("CREDLENS_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _fastkernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND: str = _impl.NAME

best_split = _impl.best_split
margin_matrix = _impl.margin_matrix
tree_shap_matrix = _impl.tree_shap_matrix
