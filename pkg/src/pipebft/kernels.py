"""Backend selection for the per-message hot kernels.

The reliable-broadcast and binary-consensus state machines absorb almost
every message a replica processes, so they exist twice: a pure-Python
reference (rbc.py, binary.py) and a compiled Cython twin (_ckernels.pyx)
with identical observable behavior. The compiled build is used when the
extension imports, unless PIPEBFT_PURE=1 forces the reference. The same
module also exports the simulator's compiled link fan-out engine (None on
the pure backend).

`pipebft bench-kernels` times one against the other, and the test suite
checks they emit identical message sequences over randomized schedules.
"""

import os

from .binary import BinInstance as _PyBinInstance
from .binary import DuplicatePropose
from .rbc import DuplicateStart
from .rbc import RbcInstance as _PyRbcInstance

if os.environ.get("PIPEBFT_PURE"):
    BACKEND = "pure"
    RbcInstance = _PyRbcInstance
    BinInstance = _PyBinInstance
    SimLinkEngine = None
else:
    try:
        from ._ckernels import BinInstance, RbcInstance, SimLinkEngine

        BACKEND = "compiled"
    except ImportError:
        BACKEND = "pure"
        RbcInstance = _PyRbcInstance
        BinInstance = _PyBinInstance
        SimLinkEngine = None

__all__ = [
    "BACKEND",
    "BinInstance",
    "DuplicatePropose",
    "DuplicateStart",
    "RbcInstance",
    "SimLinkEngine",
]
