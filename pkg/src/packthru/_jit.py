"""JIT shim: numba njit when available, identity decorator otherwise.

Setting NUMBA_DISABLE_JIT=1 (or running without numba installed) executes
the same kernel code as plain Python, which is what the test suite relies
on for line-level debugging.
"""

import os

try:
    from numba import njit as _njit

    def njit(*args, **kwargs):
        kwargs.setdefault("cache", True)
        return _njit(*args, **kwargs)

    JIT_ENABLED = os.environ.get("NUMBA_DISABLE_JIT", "0") != "1"
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap

    JIT_ENABLED = False
