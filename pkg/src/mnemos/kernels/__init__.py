"""Similarity-scan kernels with import-time backend selection.

The hot loop of the engine is the exhaustive cosine scan behind every
dense retrieval. Two interchangeable backends provide it:

* ``native`` — a Cython extension (built via ``setup.py``),
* ``python`` — a NumPy implementation, always available.

The compiled backend is preferred when present. Set ``MNEMOS_KERNEL`` to
``python`` or ``native`` to force one (forcing ``native`` raises if the
extension was never built). ``mnemos-bench kernels`` times both.
"""

import os

from . import fallback

_requested = os.environ.get("MNEMOS_KERNEL", "").strip().lower()

if _requested == "python":
    _impl = fallback
elif _requested == "native":
    from . import _native as _impl  # noqa: F401  (ImportError is the contract)
else:
    try:
        from . import _native as _impl
    except ImportError:
        _impl = fallback

cosine_scores = _impl.cosine_scores
top_k_indices = _impl.top_k_indices
BACKEND = _impl.backend_name()


def available_backends() -> dict:
    """Map of backend name -> module for every backend importable in
    this environment."""
    backends = {"python": fallback}
    try:
        from . import _native
    except ImportError:
        pass
    else:
        backends["native"] = _native
    return backends
