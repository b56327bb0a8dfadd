"""Attention kernel backend selection.

The compiled extension (`dfar.kernels._native`, built from
`_native.pyx`) is preferred when importable; otherwise the numpy
reference takes over. Override with the environment variable
`DFAR_KERNEL_BACKEND` or the `--kernel-backend` CLI flag:

    auto    compiled if available, else python (default)
    native  compiled, error if the extension is missing
    python  numpy reference
"""

import os

from ..errors import ConfigError

_backend = None

VALID_BACKENDS = ("auto", "native", "python")


def select_backend(name: str | None = None):
    """Pick and cache the kernel module; returns it."""
    global _backend
    if name is None:
        name = os.environ.get("DFAR_KERNEL_BACKEND", "auto")
    if name not in VALID_BACKENDS:
        raise ConfigError(f"kernel backend must be one of {VALID_BACKENDS}, got {name!r}")
    if name == "auto":
        try:
            from . import _native as chosen
        except ImportError:
            from . import reference as chosen
    elif name == "native":
        try:
            from . import _native as chosen
        except ImportError as exc:
            raise ConfigError(
                "native kernel backend requested but the compiled extension "
                "is not available (reinstall with a C toolchain present)") from exc
    else:
        from . import reference as chosen
    _backend = chosen
    return _backend


def get_backend():
    if _backend is None:
        select_backend()
    return _backend


def backend_name() -> str:
    return get_backend().BACKEND_NAME
