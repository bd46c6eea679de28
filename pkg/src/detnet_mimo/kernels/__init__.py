"""Hot-kernel backend selection.

The compiled Cython backend is preferred when its extension imported cleanly;
otherwise the NumPy reference kernels are used.  Override with the
environment variable ``DETNET_MIMO_BACKEND=python`` or ``=compiled``
(set before first import).  Both backends implement the same functions with
identical semantics; see ``pyref`` for the contract.
"""

from __future__ import annotations

import os

from . import pyref

try:
    from . import cyext
except ImportError:
    cyext = None

_requested = os.environ.get("DETNET_MIMO_BACKEND", "").strip().lower()
if _requested in ("python", "py", "pure"):
    backend = pyref
elif _requested in ("compiled", "c", "cython"):
    if cyext is None:
        raise ImportError(
            "DETNET_MIMO_BACKEND=compiled but the compiled kernels are not built"
        )
    backend = cyext
elif _requested == "":
    backend = cyext if cyext is not None else pyref
else:
    raise ImportError(f"unknown DETNET_MIMO_BACKEND value: {_requested!r}")

BACKEND_NAME = backend.NAME
HAVE_COMPILED = cyext is not None

gram_and_hty = pyref.gram_and_hty
detnet_forward = backend.detnet_forward
detnet_detect = backend.detnet_detect
detnet_backward = backend.detnet_backward
amp_detect = backend.amp_detect
ml_detect = backend.ml_detect


def available_backends():
    out = [pyref]
    if cyext is not None:
        out.append(cyext)
    return out
