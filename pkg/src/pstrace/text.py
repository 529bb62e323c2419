"""Text cleaning, title normalization and rule-based sentence segmentation."""

from __future__ import annotations

import re
import string
import unicodedata
from typing import Iterable

_LINE_BREAKS = re.compile("[\r\n\t\v\f\x85\u2028\u2029]")
_WS = re.compile(r"\s+")
_TERMINATOR = re.compile(r"[.!?]+")

DEFAULT_ABBREVIATIONS = ("e.g.", "i.e.", "et al.", "Fig.", "cf.")


def clean_text(raw: str) -> str:
    """Flatten XML-derived text to a single trimmed line.

    Line breaks and tabs become spaces, ``<`` and ``>`` are deleted along with
    any remaining control characters, and whitespace runs collapse to one space.
    """
    text = _LINE_BREAKS.sub(" ", raw)
    text = text.replace("<", "").replace(">", "")
    text = "".join(ch for ch in text if unicodedata.category(ch) != "Cc")
    return _WS.sub(" ", text).strip()


def collapse_ws(text: str) -> str:
    return _WS.sub(" ", text).strip()


_PUNCT_TABLE = {ord(c): " " for c in string.punctuation}


def normalize_title(title: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace."""
    text = unicodedata.normalize("NFKC", title).lower().translate(_PUNCT_TABLE)
    text = "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in text)
    return collapse_ws(text)


class SentenceSegmenter:
    """Split on ``.``, ``!`` or ``?`` followed by whitespace and an uppercase
    letter (or by the end of the text), unless the terminator closes one of the
    guarded abbreviations.
    """

    def __init__(self, abbreviations: Iterable[str] = DEFAULT_ABBREVIATIONS):
        self.abbreviations = tuple(abbreviations)

    def _guarded(self, text: str, end: int) -> bool:
        head = text[:end]
        for abbr in self.abbreviations:
            if head.endswith(abbr):
                before = end - len(abbr) - 1
                if before < 0 or not text[before].isalnum():
                    return True
        return False

    def spans(self, text: str) -> list[tuple[int, int]]:
        """Return ``(start, end)`` offsets of each sentence, whitespace excluded."""
        bounds = []
        n = len(text)
        for m in _TERMINATOR.finditer(text):
            end = m.end()
            j = end
            while j < n and text[j].isspace():
                j += 1
            if j == n:
                bounds.append(end)
                continue
            if j == end or not text[j].isupper():
                continue
            if self._guarded(text, end):
                continue
            bounds.append(end)

        out = []
        pos = 0
        for end in bounds + [n]:
            while pos < end and text[pos].isspace():
                pos += 1
            stop = end
            while stop > pos and text[stop - 1].isspace():
                stop -= 1
            if stop > pos:
                out.append((pos, stop))
            pos = max(pos, end)
        return out

    def split(self, text: str) -> list[str]:
        return [text[a:b] for a, b in self.spans(text)]
