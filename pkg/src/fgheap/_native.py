"""Thin access to the platform memory interfaces.

Everything the kernels need from libc (mmap, munmap, mprotect, pthread
mutexes, memset and the system malloc/free used for comparison runs) is
exposed here as functions taking and returning int64 values.  Under numba
they lower to direct calls of the libc symbols; on the Python path they go
through ctypes.
"""
import ctypes
import ctypes.util
import mmap as _mmap

from ._jit import USE_JIT

PROT_NONE = 0
PROT_READ = 1
PROT_WRITE = 2
MAP_PRIVATE = 0x02
MAP_ANONYMOUS = 0x20
MAP_NORESERVE = 0x4000

PAGE_SIZE = _mmap.PAGESIZE
PAGE_SHIFT = PAGE_SIZE.bit_length() - 1
MAP_FAILED = -1

# glibc's PTHREAD_MUTEX_INITIALIZER is all-zero; 64 bytes covers every ABI we run on.
MUTEX_BYTES = 64

_libc = ctypes.CDLL(None, use_errno=True)
try:
    _libc.pthread_mutex_lock
except AttributeError:  # glibc < 2.34 keeps pthreads in a separate library
    _libc = ctypes.CDLL(ctypes.util.find_library("pthread"), use_errno=True)


def _cfunc(name, restype, *argtypes):
    fn = getattr(_libc, name)
    fn.restype = restype
    fn.argtypes = list(argtypes)
    return fn


_c_mmap = _cfunc("mmap", ctypes.c_ssize_t, ctypes.c_size_t, ctypes.c_size_t,
                 ctypes.c_int, ctypes.c_int, ctypes.c_int, ctypes.c_long)
_c_munmap = _cfunc("munmap", ctypes.c_int, ctypes.c_size_t, ctypes.c_size_t)
_c_mprotect = _cfunc("mprotect", ctypes.c_int, ctypes.c_size_t, ctypes.c_size_t, ctypes.c_int)
_c_lock = _cfunc("pthread_mutex_lock", ctypes.c_int, ctypes.c_size_t)
_c_unlock = _cfunc("pthread_mutex_unlock", ctypes.c_int, ctypes.c_size_t)
_c_memset = _cfunc("memset", ctypes.c_size_t, ctypes.c_size_t, ctypes.c_int, ctypes.c_size_t)
_c_malloc = _cfunc("malloc", ctypes.c_size_t, ctypes.c_size_t)
_c_free = _cfunc("free", None, ctypes.c_size_t)


if USE_JIT:
    from llvmlite import ir
    from numba import types
    from numba.core import cgutils
    from numba.extending import intrinsic

    def _lower_extern(name, nargs, void=False):
        def codegen(context, builder, signature, args):
            i64 = ir.IntType(64)
            fnty = ir.FunctionType(ir.VoidType() if void else i64, [i64] * nargs)
            fn = cgutils.get_or_insert_function(builder.module, fnty, name)
            ret = builder.call(fn, [context.cast(builder, v, t, types.int64)
                                    for v, t in zip(args, signature.args)])
            return context.get_dummy_value() if void else ret
        return codegen

    _RET = types.int64

    @intrinsic
    def sys_mmap(typingctx, length):
        # anonymous private read/write mapping
        def codegen(context, builder, signature, args):
            i64 = ir.IntType(64)
            fnty = ir.FunctionType(i64, [i64] * 6)
            fn = cgutils.get_or_insert_function(builder.module, fnty, "mmap")
            length = context.cast(builder, args[0], signature.args[0], types.int64)
            return builder.call(fn, [i64(0), length, i64(PROT_READ | PROT_WRITE),
                                     i64(MAP_PRIVATE | MAP_ANONYMOUS), i64(-1), i64(0)])
        return _RET(length), codegen

    @intrinsic
    def sys_munmap(typingctx, addr, length):
        return _RET(addr, length), _lower_extern("munmap", 2)

    @intrinsic
    def sys_mprotect(typingctx, addr, length, prot):
        return _RET(addr, length, prot), _lower_extern("mprotect", 3)

    @intrinsic
    def mutex_lock(typingctx, addr):
        return _RET(addr), _lower_extern("pthread_mutex_lock", 1)

    @intrinsic
    def mutex_unlock(typingctx, addr):
        return _RET(addr), _lower_extern("pthread_mutex_unlock", 1)

    @intrinsic
    def c_memset(typingctx, addr, value, length):
        return _RET(addr, value, length), _lower_extern("memset", 3)

    @intrinsic
    def c_malloc(typingctx, size):
        return _RET(size), _lower_extern("malloc", 1)

    @intrinsic
    def c_free(typingctx, addr):
        return types.void(addr), _lower_extern("free", 1, void=True)

else:

    def sys_mmap(length):
        return _c_mmap(0, int(length), PROT_READ | PROT_WRITE, MAP_PRIVATE | MAP_ANONYMOUS, -1, 0)

    def sys_munmap(addr, length):
        return _c_munmap(int(addr), int(length))

    def sys_mprotect(addr, length, prot):
        return _c_mprotect(int(addr), int(length), int(prot))

    def mutex_lock(addr):
        return _c_lock(int(addr))

    def mutex_unlock(addr):
        return _c_unlock(int(addr))

    def c_memset(addr, value, length):
        return _c_memset(int(addr), int(value), int(length))

    def c_malloc(size):
        return _c_malloc(int(size)) or 0

    def c_free(addr):
        _c_free(int(addr))


def reserve(length):
    """Reserve *length* bytes of address space without committing memory."""
    addr = _c_mmap(0, length, PROT_READ | PROT_WRITE,
                   MAP_PRIVATE | MAP_ANONYMOUS | MAP_NORESERVE, -1, 0)
    if addr == MAP_FAILED:
        raise MemoryError(f"cannot reserve {length} bytes: errno {ctypes.get_errno()}")
    return addr


def release(addr, length):
    if _c_munmap(addr, length) != 0:
        raise OSError(ctypes.get_errno(), "munmap failed")


def read_bytes(addr, length):
    return ctypes.string_at(addr, length)


def write_bytes(addr, data):
    ctypes.memmove(addr, data, len(data))


def fill(addr, value, length):
    ctypes.memset(addr, value, length)


def copy(dst, src, length):
    ctypes.memmove(dst, src, length)


def view(addr, length, ctype=ctypes.c_uint8):
    """numpy array aliasing raw memory; never touches it."""
    import numpy as np

    count = length // ctypes.sizeof(ctype)
    return np.ctypeslib.as_array(ctypes.cast(addr, ctypes.POINTER(ctype)), shape=(count,))
