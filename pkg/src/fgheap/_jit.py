"""JIT selection.

Kernels are written once against numpy arrays.  By default they are compiled
with numba in nopython mode (``nogil`` so worker threads really run in
parallel); setting ``FG_DISABLE_JIT=1`` leaves them as ordinary Python
functions operating on numpy scalars, which is slow but handy for debugging
and for benchmarking the two paths against each other.
"""
import os
import warnings

USE_JIT = os.environ.get("FG_DISABLE_JIT", "0") not in ("1", "true", "yes")

if USE_JIT:
    import numba

    # Kernels never allocate arrays, and the arrays they touch are owned by
    # the Python caller, so the refcounting runtime is switched off: with it
    # every attribute read of the state tuple costs an atomic incref/decref.
    _OPTIONS = dict(cache=True, nogil=True, _nrt=False)

    def jit(fn):
        return numba.njit(**_OPTIONS)(fn)

    def inline(fn):
        # Inlined at the numba IR level so the state tuple is not rebuilt
        # on every helper call.
        return numba.njit(inline="always", **_OPTIONS)(fn)

else:

    def jit(fn):
        return fn

    inline = jit

    # uint64 wraparound is intentional in the PRNG and hashing code.
    warnings.filterwarnings("ignore", message="overflow encountered", category=RuntimeWarning)

BACKEND = "numba" if USE_JIT else "python"
