"""Structured key=value micro-format for synthetic inputs.

A structured text is a run of space-separated ``key=value`` tokens followed by
an optional free-text tail, e.g. ``"ctx=male s=nurse topic=1 loves the ward"``.
Reserved keys are ``ctx`` (the context), ``s`` (the stratum) and ``u1..uk``
(exogenous features); any other key is allowed. Token order is declaration
order and is preserved verbatim, so canonical texts (single spaces between
tokens) round-trip byte-identically through parse/render.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

CTX_KEY = "ctx"
STRATUM_KEY = "s"
PAD_KEY = "pad"

_TOKEN_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)=(\S*)$")


@dataclass(frozen=True)
class StructuredText:
    """Parsed form: ordered (key, value) pairs plus a verbatim tail."""

    pairs: tuple[tuple[str, str], ...]
    tail: str = ""

    def render(self) -> str:
        head = " ".join(f"{k}={v}" for k, v in self.pairs)
        if head and self.tail:
            return head + " " + self.tail
        return head or self.tail

    def get(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.pairs:
            if k == key:
                return v
        return default

    def has(self, key: str) -> bool:
        return any(k == key for k, _ in self.pairs)

    def without(self, key: str) -> "StructuredText":
        """Drop every token with the given key."""
        return StructuredText(
            tuple((k, v) for k, v in self.pairs if k != key), self.tail
        )

    def with_front(self, key: str, value: str) -> "StructuredText":
        """Insert a token at the canonical front position (used for ctx)."""
        return StructuredText(((key, value),) + self.pairs, self.tail)

    def replace_value(self, key: str, value: str) -> "StructuredText":
        """Rewrite the value of the first token with the given key."""
        out = []
        done = False
        for k, v in self.pairs:
            if k == key and not done:
                out.append((k, value))
                done = True
            else:
                out.append((k, v))
        return StructuredText(tuple(out), self.tail)


def parse_structured(text: str) -> StructuredText:
    """Split leading key=value tokens from the free-text tail.

    The first token that does not look like ``key=value`` starts the tail,
    which is kept verbatim (including any internal spacing).
    """
    pairs: list[tuple[str, str]] = []
    rest = text
    while rest:
        token, sep, remainder = rest.partition(" ")
        m = _TOKEN_RE.match(token)
        if m is None:
            break
        pairs.append((m.group(1), m.group(2)))
        rest = remainder
    return StructuredText(tuple(pairs), rest)


def is_structured(text: str) -> bool:
    """True when the text carries at least one key=value token."""
    return bool(parse_structured(text).pairs)
