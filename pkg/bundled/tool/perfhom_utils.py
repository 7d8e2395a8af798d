# Licensed under the MIT License.
"""Utility functions and classes shared by the perfhom tool modules."""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import pathlib
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, List, Optional, Sequence, Type, TypeVar

LOGGER = logging.getLogger("perfhom")

MAX_WORKERS = 8

_T = TypeVar("_T")
_R = TypeVar("_R")


class PerfhomError(Exception):
    """Base class for every error raised by perfhom."""

    pass  # pylint: disable=unnecessary-pass


class PerfhomWarning(UserWarning):
    """Base class for diagnostic conditions that do not stop a computation."""

    pass  # pylint: disable=unnecessary-pass


class MessageType(enum.IntEnum):
    """Message severities, ordered like the editor protocol levels."""

    Error = 1
    Warning = 2
    Info = 3
    Log = 4


_LEVELS = {
    MessageType.Error: logging.ERROR,
    MessageType.Warning: logging.WARNING,
    MessageType.Info: logging.INFO,
    MessageType.Log: logging.DEBUG,
}


# **********************************************************
# Logging and notification helpers.
# **********************************************************
def _show_notification() -> str:
    return os.getenv("PERFHOM_SHOW_NOTIFICATION", "off")


def _show_message(message: str, msg_type: MessageType) -> None:
    print(f"[perfhom] {msg_type.name}: {message}", file=sys.stderr)


def log_to_output(message: str, msg_type: MessageType = MessageType.Log) -> None:
    """Sends a message to the perfhom log."""
    LOGGER.log(_LEVELS[msg_type], message)


def log_error(message: str) -> None:
    """Logs an error, echoing it to stderr when notifications ask for errors."""
    log_to_output(message, MessageType.Error)
    if _show_notification() in ["onError", "onWarning", "always"]:
        _show_message(message, MessageType.Error)


def log_warning(message: str) -> None:
    """Logs a warning, echoing it to stderr when notifications ask for warnings."""
    log_to_output(message, MessageType.Warning)
    if _show_notification() in ["onWarning", "always"]:
        _show_message(message, MessageType.Warning)


def log_always(message: str) -> None:
    """Logs an informational message."""
    log_to_output(message, MessageType.Info)
    if _show_notification() in ["always"]:
        _show_message(message, MessageType.Info)


def warn(category: Type[PerfhomWarning], message: str) -> None:
    """Issues a diagnostic warning and records it in the log."""
    warnings.warn(message, category, stacklevel=3)
    log_warning(message)


def log_settings(title: str, settings: Any) -> None:
    """Logs a settings block as indented JSON."""
    log_to_output(
        f"{title}:\r\n{json.dumps(settings, indent=4, ensure_ascii=False, default=str)}\r\n"
    )


# **********************************************************
# Hashing, caching and worker helpers.
# **********************************************************
def config_hash(data: Any) -> str:
    """Returns the sha256 digest of the canonical JSON form of `data`."""
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def array_digest(*arrays: Any) -> str:
    """Returns the sha256 digest of the raw bytes of the given numpy arrays."""
    digest = hashlib.sha256()
    for array in arrays:
        digest.update(str(array.shape).encode("utf-8"))
        digest.update(array.tobytes())
    return digest.hexdigest()


def cache_dir() -> Optional[pathlib.Path]:
    """Returns the corrector cache directory from PERFHOM_CACHE, if set."""
    location = os.getenv("PERFHOM_CACHE")
    if not location:
        return None
    path = pathlib.Path(location)
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_parallel(
    func: Callable[[_T], _R], items: Iterable[_T], jobs: int = 1
) -> List[_R]:
    """Maps `func` over `items`, concurrently when `jobs` > 1.

    Results are returned in input order regardless of scheduling.
    """
    work: Sequence[_T] = list(items)
    if jobs <= 1 or len(work) <= 1:
        return [func(item) for item in work]
    with ThreadPoolExecutor(max_workers=min(jobs, MAX_WORKERS)) as pool:
        return list(pool.map(func, work))


def format_value(value: float) -> str:
    """Formats a float for report files with a fixed number of digits."""
    return f"{value:.10g}"
