"""Exception hierarchy and retry decorator."""

import functools
import time
import logging

from . import config

log = logging.getLogger(__name__)


# ── Exceptions ────────────────────────────────────────────────────

class NavError(Exception):
    """Base exception for all consensusnav errors."""


class ConfigError(NavError):
    """Invalid run configuration or config value."""


class MalformedScene(NavError):
    """Scene file does not match the scene schema."""


class InvalidPlacement(MalformedScene):
    """An object footprint lies on an obstacle or outside the grid."""

    def __init__(self, object_id, cell):
        self.object_id = object_id
        self.cell = tuple(cell)
        super().__init__(f"object {object_id} placed on blocked cell {self.cell}")


class MalformedEpisode(NavError):
    """Episode file does not match the episode schema."""


class Unreachable(NavError):
    """No path exists between the requested cells."""


class GoalBlocked(NavError):
    """Every goal cell handed to the planner is an obstacle."""


class NoFrontier(NavError):
    """Exploration exhausted: no frontier left to select."""


class DegenerateInput(NavError):
    """Oracle weights cannot be normalized into a policy."""


class OracleUnavailable(NavError):
    """Remote oracle transport failed after retries."""


class MalformedResponse(NavError):
    """Remote oracle answer did not match the expected format."""

    def __init__(self, text, mode):
        self.text = text
        self.mode = mode
        super().__init__(f"unparseable {mode} response: {text[:80]!r}")


class EmptyBatch(NavError):
    """Metrics requested over zero episodes."""


class BatchError(NavError):
    """One or more episodes of a batch aborted."""

    def __init__(self, failures):
        self.failures = dict(failures)
        listing = ", ".join(f"{k}: {v}" for k, v in sorted(self.failures.items()))
        super().__init__(f"{len(self.failures)} episode(s) aborted: {listing}")


# ── Retry decorator ──────────────────────────────────────────────

def backoff_delays(retries: int, base: float):
    """Sleep lengths before each retry: base, 2·base, 4·base, ..."""
    return [base * 2 ** k for k in range(retries)]


def retry(max_retries=None, backoff=None, exceptions=(Exception,), retry_if=None):
    """Retry a call on transient failures.

    ``max_retries`` extra attempts follow the first one, separated by
    :func:`backoff_delays`. ``retry_if(exc)`` may veto a retry for an
    exception that is permanent (the exception is re-raised at once).
    Defaults come from ``config.MAX_RETRIES`` and ``config.RETRY_BACKOFF``.
    """
    if max_retries is None:
        max_retries = config.MAX_RETRIES
    if backoff is None:
        backoff = config.RETRY_BACKOFF
    delays = backoff_delays(max_retries, backoff)

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            for attempt, wait in enumerate(delays, start=1):
                try:
                    return func(*args, **kwargs)
                except exceptions as exc:
                    if retry_if is not None and not retry_if(exc):
                        raise
                    log.warning("%s failed (%s); retry %d/%d in %.1fs",
                                func.__name__, exc, attempt, max_retries, wait)
                    time.sleep(wait)
            return func(*args, **kwargs)
        return wrapper
    return decorator
