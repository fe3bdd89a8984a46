"""Head/tail truncation of long command output before it reaches the policy."""

from __future__ import annotations

import re

DEFAULT_HEAD_LIMIT = 2000
DEFAULT_TAIL_LIMIT = 2000

_MARKER_RE = re.compile(r"\n…\[(\d+) chars omitted\]…\n")


def _marker(omitted: int) -> str:
    return f"\n…[{omitted} chars omitted]…\n"


def truncate(
    text: str,
    head_limit: int = DEFAULT_HEAD_LIMIT,
    tail_limit: int = DEFAULT_TAIL_LIMIT,
) -> str:
    """Keep the first ``head_limit`` and last ``tail_limit`` characters.

    The omission marker states the exact number of characters removed.
    Idempotent: re-truncating an already truncated text returns it unchanged.
    """
    if head_limit < 0 or tail_limit < 0:
        raise ValueError("truncation limits must be >= 0")
    if len(text) <= head_limit + tail_limit:
        return text
    middle = text[head_limit : len(text) - tail_limit]
    if _MARKER_RE.fullmatch(middle):
        return text
    omitted = len(text) - head_limit - tail_limit
    return text[:head_limit] + _marker(omitted) + text[len(text) - tail_limit :]
