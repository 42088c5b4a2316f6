"""Injectable time sources.

Nothing in the package reads the wall clock directly: every time-dependent
operation takes a Clock (or an explicit ``now``), so tests and the CLI's
``--clock`` flag can pin time deterministically.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone


def parse_rfc3339(text: str) -> datetime:
    """Parse an RFC 3339 timestamp into an aware UTC datetime."""
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def render_rfc3339(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class Clock:
    def now(self) -> datetime:
        raise NotImplementedError

    def epoch(self) -> int:
        """Whole seconds since the Unix epoch (signed payloads carry ints)."""
        return int(self.now().timestamp())


class SystemClock(Clock):
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class ManualClock(Clock):
    """Clock that only moves when told to."""

    def __init__(self, start: datetime | str = "2026-01-01T00:00:00Z"):
        if isinstance(start, str):
            start = parse_rfc3339(start)
        if start.tzinfo is None:
            start = start.replace(tzinfo=timezone.utc)
        self._now = start.astimezone(timezone.utc)

    def now(self) -> datetime:
        return self._now

    def advance(self, seconds: float) -> datetime:
        self._now += timedelta(seconds=seconds)
        return self._now

    def set(self, when: datetime | str) -> None:
        if isinstance(when, str):
            when = parse_rfc3339(when)
        self._now = when.astimezone(timezone.utc)
