"""Batch progress, formatting, seeding and logging helpers."""

import hashlib
import logging
import sys

log = logging.getLogger(__name__)

# ── Try to import tqdm, fall back to simple progress ──────────────
try:
    from tqdm import tqdm as _tqdm
    HAS_TQDM = True
except ImportError:
    HAS_TQDM = False


def setup_logging(verbose: bool = False):
    """Configure root logger."""
    level = logging.DEBUG if verbose else logging.INFO
    fmt = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
    logging.basicConfig(level=level, format=fmt, stream=sys.stderr)
    logging.getLogger().setLevel(level)


def stable_seed(*parts) -> int:
    """64-bit seed from arbitrary printable parts, stable across processes."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def format_rate(value: float) -> str:
    """Percentage with one decimal, e.g. 0.354 -> '35.4%'."""
    return f"{100.0 * value:.1f}%"


def format_duration(ms: float) -> str:
    """Human-readable wall time."""
    if ms < 1000:
        return f"{ms:.0f} ms"
    seconds = ms / 1000.0
    if seconds < 60:
        return f"{seconds:.1f} s"
    return f"{int(seconds // 60)}m{seconds % 60:04.1f}s"


class EpisodeProgress:
    """Batch progress with a running success rate; tqdm when available."""

    def __init__(self, total: int, desc: str = ""):
        self.total = total
        self.desc = desc
        self.n = 0
        self.successes = 0
        self.failed = 0
        self._bar = _tqdm(total=total, desc=desc, unit="ep") if HAS_TQDM else None
        self._last_pct = -1

    @property
    def success_rate(self) -> float:
        finished = self.n - self.failed
        return self.successes / finished if finished else 0.0

    def record(self, success):
        """Count one finished episode; ``success`` is None when the episode aborted."""
        self.n += 1
        if success is None:
            self.failed += 1
        elif success:
            self.successes += 1
        if self._bar is not None:
            self._bar.set_postfix(sr=format_rate(self.success_rate), failed=self.failed, refresh=False)
            self._bar.update(1)
            return
        pct = int(self.n * 100 / self.total) if self.total else 100
        if pct != self._last_pct and pct % 5 == 0:
            self._last_pct = pct
            sys.stderr.write(f"\r{self.desc}: {pct}% ({self.n}/{self.total}) SR {format_rate(self.success_rate)}")
            sys.stderr.flush()

    def close(self):
        if self._bar is not None:
            self._bar.close()
        else:
            sys.stderr.write("\n")
            sys.stderr.flush()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
