"""Backend selection.

The compiled extension is used when importable; setting the environment
variable ``DIRACSC_PURE_PYTHON=1`` forces the pure-Python reference core.
"""
import logging
import os

from . import _pycore

log = logging.getLogger(__name__)


def _select():
    if os.environ.get("DIRACSC_PURE_PYTHON", "") not in ("", "0"):
        return _pycore
    try:
        from . import _core
    except ImportError as exc:
        log.info("compiled core unavailable (%s); using Python fallback", exc)
        return _pycore
    return _core


core = _select()
BACKEND = core.BACKEND_NAME


def get_backend(name=None):
    """Return a backend module by name (``"compiled"``, ``"python"``) or the default."""
    if name is None:
        return core
    if name == "python":
        return _pycore
    if name == "compiled":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
