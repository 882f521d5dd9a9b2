"""Count numpy data-buffer allocations with an instrumented memory handler.

numpy (>= 1.22) lets a context install its own data allocator. This module
builds one with ctypes that forwards to libc and counts every malloc,
calloc and realloc, so freed temporaries are counted too. Arrays remember
the handler that allocated them, so swapping handlers is safe.
"""

from __future__ import annotations

import ctypes
from contextlib import contextmanager

import numpy as np

_SET_HANDLER_SLOT = 304  # PyDataMem_SetHandler in the multiarray C-API table

_libc = ctypes.CDLL(None)
_libc.malloc.restype = ctypes.c_void_p
_libc.malloc.argtypes = [ctypes.c_size_t]
_libc.calloc.restype = ctypes.c_void_p
_libc.calloc.argtypes = [ctypes.c_size_t, ctypes.c_size_t]
_libc.realloc.restype = ctypes.c_void_p
_libc.realloc.argtypes = [ctypes.c_void_p, ctypes.c_size_t]
_libc.free.restype = None
_libc.free.argtypes = [ctypes.c_void_p]

_MALLOC = ctypes.CFUNCTYPE(ctypes.c_void_p, ctypes.c_void_p, ctypes.c_size_t)
_CALLOC = ctypes.CFUNCTYPE(ctypes.c_void_p, ctypes.c_void_p, ctypes.c_size_t, ctypes.c_size_t)
_REALLOC = ctypes.CFUNCTYPE(ctypes.c_void_p, ctypes.c_void_p, ctypes.c_void_p, ctypes.c_size_t)
_FREE = ctypes.CFUNCTYPE(None, ctypes.c_void_p, ctypes.c_void_p, ctypes.c_size_t)


class _Allocator(ctypes.Structure):
    _fields_ = [("ctx", ctypes.c_void_p), ("malloc", _MALLOC), ("calloc", _CALLOC), ("realloc", _REALLOC), ("free", _FREE)]


class _Handler(ctypes.Structure):
    _fields_ = [("name", ctypes.c_char * 127), ("version", ctypes.c_uint8), ("allocator", _Allocator)]


class AllocationCounter:
    def __init__(self):
        self.allocations = 0
        self.bytes = 0
        self._active = False

        def _malloc(ctx, size):
            if self._active:
                self.allocations += 1
                self.bytes += size
            return _libc.malloc(size)

        def _calloc(ctx, n, size):
            if self._active:
                self.allocations += 1
                self.bytes += n * size
            return _libc.calloc(n, size)

        def _realloc(ctx, ptr, size):
            if self._active:
                self.allocations += 1
                self.bytes += size
            return _libc.realloc(ptr, size)

        def _free(ctx, ptr, size):
            _libc.free(ptr)

        # keep the callbacks alive as long as the handler
        self._callbacks = (_MALLOC(_malloc), _CALLOC(_calloc), _REALLOC(_realloc), _FREE(_free))
        self._handler = _Handler(b"pissm_counting", 1, _Allocator(None, *self._callbacks))
        new_capsule = ctypes.pythonapi.PyCapsule_New
        new_capsule.restype = ctypes.py_object
        new_capsule.argtypes = [ctypes.c_void_p, ctypes.c_char_p, ctypes.c_void_p]
        self.capsule = new_capsule(ctypes.addressof(self._handler), b"mem_handler", None)

    def reset(self):
        self.allocations = 0
        self.bytes = 0


def _set_handler():
    api = np._core._multiarray_umath._ARRAY_API
    get_name = ctypes.pythonapi.PyCapsule_GetName
    get_name.restype = ctypes.c_char_p
    get_name.argtypes = [ctypes.py_object]
    get_ptr = ctypes.pythonapi.PyCapsule_GetPointer
    get_ptr.restype = ctypes.c_void_p
    get_ptr.argtypes = [ctypes.py_object, ctypes.c_char_p]
    table = ctypes.cast(get_ptr(api, get_name(api)), ctypes.POINTER(ctypes.c_void_p))
    # PYFUNCTYPE keeps the GIL held across the call
    fn = ctypes.PYFUNCTYPE(ctypes.py_object, ctypes.py_object)(table[_SET_HANDLER_SLOT])
    return fn


_counter: AllocationCounter | None = None


@contextmanager
def counting_allocations():
    """Install the counting handler; yields the counter, counting only inside the block."""
    global _counter
    if _counter is None:
        _counter = AllocationCounter()
    set_handler = _set_handler()
    previous = set_handler(_counter.capsule)
    _counter.reset()
    _counter._active = True
    try:
        yield _counter
    finally:
        _counter._active = False
        set_handler(previous)
        if np._core.multiarray.get_handler_name() == "pissm_counting":
            raise RuntimeError("failed to restore the numpy memory handler")
