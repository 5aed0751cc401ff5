"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
always available.  Set MIXASR_KERNELS=py or MIXASR_KERNELS=cy to force a
backend (forcing cy raises if the extension was not built).

Both backends implement:

    lstm_forward(x, wx, wh, b) -> (h, cache)
    lstm_backward(dh, cache)   -> (dx, dwx, dwh, db)

with x: TxD, wx: Dx4H, wh: Hx4H, b: 4H, h: TxH and gate layout
[input | forget | cell | output] on the 4H axis.
"""

import os

from . import lstm_py

_forced = os.environ.get("MIXASR_KERNELS", "").lower()

if _forced == "py":
    _impl = lstm_py
    BACKEND = "numpy"
else:
    try:
        from . import _lstm_cy as _impl
        BACKEND = "cython"
    except ImportError:
        if _forced == "cy":
            raise ImportError("MIXASR_KERNELS=cy but the compiled extension is missing")
        _impl = lstm_py
        BACKEND = "numpy"

lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward


def backend_name() -> str:
    return BACKEND
