"""Tree kernels: the compiled core when available, else the numpy reference.

Set ``PROGNOSTIC_BACKEND=python`` to force the fallback. ``BACKEND`` names the
implementation in use.
"""

import os

from . import _pytrees


def load_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _pytrees
    if name == "cython":
        from . import _ctrees

        return _ctrees
    raise ValueError(f"unknown backend {name!r}")


if os.environ.get("PROGNOSTIC_BACKEND", "").lower() == "python":
    _impl, BACKEND = _pytrees, "python"
else:
    try:
        _impl, BACKEND = load_backend("cython"), "cython"
    except ImportError:
        _impl, BACKEND = _pytrees, "python"

grow_survival_tree = _impl.grow_survival_tree
grow_boost_tree = _impl.grow_boost_tree
apply_trees = _impl.apply_trees
logrank_statistic = _pytrees.logrank_statistic
draw_features = _pytrees.draw_features
SplitMix64 = _pytrees.SplitMix64

__all__ = ["BACKEND", "load_backend", "grow_survival_tree", "grow_boost_tree", "apply_trees",
           "logrank_statistic"]
