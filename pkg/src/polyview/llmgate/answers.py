from __future__ import annotations

import re
from typing import NamedTuple

ANSWER_TAG = "<|ANSWER|>"
_LEADING_COLON = re.compile(r"^\s*[:：]")


class TaggedAnswer(NamedTuple):
    text: str
    untagged: bool


def parse_answer_tag(text: str) -> TaggedAnswer:
    """Take what follows the last answer tag (and an optional colon).

    Without a tag the whole trimmed text is returned and flagged.
    """
    head, sep, tail = text.rpartition(ANSWER_TAG)
    if not sep:
        return TaggedAnswer(text.strip(), True)
    return TaggedAnswer(_LEADING_COLON.sub("", tail, count=1).strip(), False)
