"""Compilation switch and the small primitives shared by every hot kernel.

Kernels are written once, in the subset of Python that numba accepts, and
decorated with :func:`jit`.  When numba is importable and the environment
variable ``COARSEMBED_DISABLE_JIT`` is not set to a truthy value, they are
compiled with ``numba.njit(nogil=True)`` so worker threads run them in
parallel.  Otherwise the very same functions execute as plain Python over
numpy arrays, which is slow but dependency-free and handy for debugging.
"""

import os
import threading

DISABLE_ENV = "COARSEMBED_DISABLE_JIT"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _jit_requested():
    return os.environ.get(DISABLE_ENV, "").strip().lower() not in ("1", "true", "yes", "on")


JIT_ENABLED = numba is not None and _jit_requested()

MASK32 = 0xFFFFFFFF


def jit(fn=None, **options):
    """Decorate a kernel; a no-op on the fallback path."""

    def wrap(f):
        if not JIT_ENABLED:
            return f
        options.setdefault("nogil", True)
        options.setdefault("cache", True)
        return numba.njit(**options)(f)

    if fn is not None:
        return wrap(fn)
    return wrap


if JIT_ENABLED:
    from numba import types
    from numba.core import cgutils
    from numba.extending import intrinsic

    @intrinsic
    def _cas_intrinsic(typingctx, arr, idx, expected, new):
        sig = types.boolean(arr, idx, expected, new)

        def codegen(context, builder, signature, args):
            arr_t = signature.args[0]
            aryv, idxv, expv, newv = args
            ary = context.make_array(arr_t)(context, builder, aryv)
            ptr = cgutils.get_item_pointer(context, builder, arr_t, ary, [idxv],
                                           wraparound=False)
            expv = context.cast(builder, expv, signature.args[2], arr_t.dtype)
            newv = context.cast(builder, newv, signature.args[3], arr_t.dtype)
            res = builder.cmpxchg(ptr, expv, newv, "seq_cst", "seq_cst")
            return builder.extract_value(res, 1)

        return sig, codegen

    @intrinsic
    def _fetch_add_intrinsic(typingctx, arr, idx, val):
        sig = arr.dtype(arr, idx, val)

        def codegen(context, builder, signature, args):
            arr_t = signature.args[0]
            aryv, idxv, valv = args
            ary = context.make_array(arr_t)(context, builder, aryv)
            ptr = cgutils.get_item_pointer(context, builder, arr_t, ary, [idxv],
                                           wraparound=False)
            valv = context.cast(builder, valv, signature.args[2], arr_t.dtype)
            return builder.atomic_rmw("add", ptr, valv, "seq_cst")

        return sig, codegen

    @jit
    def atomic_cas(arr, idx, expected, new):
        """Set ``arr[idx] = new`` iff it equals ``expected``; True on success."""
        return _cas_intrinsic(arr, idx, expected, new)

    @jit
    def atomic_fetch_add(arr, idx, val):
        """Add ``val`` to ``arr[idx]`` and return the previous value."""
        return _fetch_add_intrinsic(arr, idx, val)

else:
    _atomic_lock = threading.Lock()

    def atomic_cas(arr, idx, expected, new):
        with _atomic_lock:
            if arr[idx] == expected:
                arr[idx] = new
                return True
            return False

    def atomic_fetch_add(arr, idx, val):
        with _atomic_lock:
            old = arr[idx]
            arr[idx] = old + val
            return old


# Counter-based RNG.  Every stream is derived from (seed, a, b) so results do
# not depend on which worker happens to process which item.  All arithmetic
# stays below 2**63 so int64 (numba) and Python int (fallback) agree exactly.


@jit
def mix32(x):
    x = x & MASK32
    x = ((x >> 16) ^ x) & MASK32
    x = (x * 0x45D9F3B) & MASK32
    x = ((x >> 16) ^ x) & MASK32
    x = (x * 0x45D9F3B) & MASK32
    x = ((x >> 16) ^ x) & MASK32
    return x


@jit
def stream_seed(seed, a, b):
    h = mix32(seed ^ 0x2545F491)
    h = mix32(h ^ (a & MASK32))
    h = mix32(h ^ ((a >> 32) & MASK32) ^ 0x68E31DA4)
    h = mix32(h ^ (b & MASK32))
    h = mix32(h ^ ((b >> 32) & MASK32) ^ 0x1B56C4E9)
    if h == 0:
        h = 0x6D2B79F5
    return h


@jit
def xorshift32(x):
    x = x ^ ((x << 13) & MASK32)
    x = x ^ (x >> 17)
    x = x ^ ((x << 5) & MASK32)
    return x


@jit
def bounded(x, n):
    """Map a 32-bit state to [0, n) by multiply-shift."""
    return (x * n) >> 32


# Purpose tags keep the streams of different samplers apart even when they
# are keyed by the same (stream, index) pair.
TAG_EPOCHS = 1
TAG_PAIRS = 2
TAG_WALK = 3
TAG_POOL = 4
TAG_POOL_NEG = 5


def derive_seed(seed, tag):
    """32-bit seed for one sampling purpose."""
    return int(mix32(mix32(int(seed) & MASK32) ^ ((tag * 0x9E3779B1) & MASK32)))
