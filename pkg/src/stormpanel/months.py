"""Calendar-month arithmetic on a flat integer index.

A month is addressed as ``year * 12 + (month - 1)`` so that lags and
differences are plain integer arithmetic.  Text form is ``YYYY-MM``.
"""

from __future__ import annotations

import datetime as _dt

from .errors import FormatError


def month_index(year: int, month: int) -> int:
    if not 1 <= month <= 12:
        raise ValueError(f"month out of range: {month}")
    return year * 12 + (month - 1)


def year_month(index: int) -> tuple[int, int]:
    return index // 12, index % 12 + 1


def format_month(index: int) -> str:
    year, month = year_month(index)
    return f"{year:04d}-{month:02d}"


def parse_month(text: str) -> int:
    try:
        year_s, month_s = text.strip().split("-")
        return month_index(int(year_s), int(month_s))
    except (ValueError, AttributeError) as exc:
        raise FormatError(f"bad month {text!r}, expected YYYY-MM") from exc


def month_of_date(d: _dt.date) -> int:
    return month_index(d.year, d.month)


def parse_timestamp(text: str) -> _dt.datetime:
    """Parse an ISO timestamp (UTC assumed); naive datetime returned."""
    s = text.strip()
    if s.endswith("Z"):
        s = s[:-1]
    try:
        ts = _dt.datetime.fromisoformat(s)
    except ValueError as exc:
        raise FormatError(f"bad timestamp {text!r}") from exc
    if ts.tzinfo is not None:
        ts = ts.astimezone(_dt.timezone.utc).replace(tzinfo=None)
    return ts


def parse_date(text: str) -> _dt.date:
    try:
        return _dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise FormatError(f"bad date {text!r}, expected YYYY-MM-DD") from exc
