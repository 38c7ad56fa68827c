"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy versions
take over. Set ``HCD_PURE_PYTHON=1`` to force the numpy path.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("HCD_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pykernels

knn = _impl.knn
forest_predict = _impl.forest_predict
median3 = _impl.median3
forest_apply = _pykernels.forest_apply

__all__ = ["BACKEND", "knn", "forest_predict", "median3", "forest_apply"]
