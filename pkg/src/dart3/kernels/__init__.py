"""Hot kernels with a compiled backend and a numpy fallback.

The compiled extension is used when it imports; set ``DART3_KERNELS=python``
to force the fallback. ``BACKEND`` names the active one.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ImportError(f"kernel backend {name!r} is not available") from None


def _select():
    wanted = os.environ.get("DART3_KERNELS", "auto")
    if wanted == "auto":
        return "cython" if "cython" in _BACKENDS else "python"
    get_backend(wanted)
    return wanted


BACKEND = _select()
_impl = _BACKENDS[BACKEND]

pairwise_sq_distances = _impl.pairwise_sq_distances
pairwise_distances = _impl.pairwise_distances
ap_cmc = _impl.ap_cmc
kmeans_assign = _impl.kmeans_assign

__all__ = [
    "BACKEND",
    "available_backends",
    "get_backend",
    "pairwise_sq_distances",
    "pairwise_distances",
    "ap_cmc",
    "kmeans_assign",
]
