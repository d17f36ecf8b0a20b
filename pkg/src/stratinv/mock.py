"""Deterministic offline chat service over the structured micro-format.

MockStructuredLm plays the remote model for tests and demos.  It recognizes the
pipeline's prompt roles by their opening phrases and implements each one exactly
on ``key=value`` token inputs: obfuscation drops the ``ctx`` token, addition
inserts ``ctx=<z>`` at the front, label prediction runs a small rule table over
the tokens, and stratum prediction reads one configured token.  Every response
is a pure function of the request, so identical requests always produce
identical texts and the client is safe to share across threads.

Caveats for fixture authors: the inserted context value is recovered by
scanning the instruction line for a known context word, so context values must
not collide with instruction wording (single letters like "a" will; tokens like
"male" or "z0" will not), and the context description must not contain any
context value as a standalone word.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

from .chat import ChatClient, ChatTurnRequest
from .errors import ServiceError, UnrecognizedRole
from .ooc import (
    ADD_MARKER,
    LABEL_MARKER,
    OBFUSCATE_MARKER,
    REWRITE_MARKER,
    STRATIFIER_MARKER,
    TEXT_SECTION,
    TaskConfig,
)
from .structured import CTX_KEY, PAD_KEY, STRATUM_KEY, StructuredText, parse_structured

_NO_ANSWER = "unknown"


@dataclass(frozen=True)
class LabelRule:
    """One row of the mock's decision table; first matching row wins.

    ``when`` lists token equalities that must all hold for the row to apply.
    A matching row answers with the constant ``label`` when set, otherwise with
    the value of the ``read`` token mapped through ``map`` (identity when no
    map is given) and falling back to ``default`` for missing or unmapped
    values.
    """

    when: tuple[tuple[str, str], ...] = ()
    read: str | None = None
    map: tuple[tuple[str, str], ...] = ()
    label: str | None = None
    default: str | None = None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "LabelRule":
        known = {"if", "read", "map", "label", "default"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown label rule keys {sorted(unknown)}")
        return cls(
            when=tuple((str(k), str(v)) for k, v in dict(doc.get("if", {})).items()),
            read=doc.get("read"),
            map=tuple((str(k), str(v)) for k, v in dict(doc.get("map", {})).items()),
            label=doc.get("label"),
            default=doc.get("default"),
        )

    def matches(self, st: StructuredText) -> bool:
        return all(st.get(key) == value for key, value in self.when)

    def answer(self, st: StructuredText) -> str:
        if self.label is not None:
            return self.label
        fallback = self.default if self.default is not None else _NO_ANSWER
        if self.read is None:
            return fallback
        value = st.get(self.read)
        if value is None:
            return fallback
        if self.map:
            return dict(self.map).get(value, fallback)
        return value


class MockStructuredLm(ChatClient):
    """Offline stand-in for a chat-completion service; see module docstring."""

    def __init__(
        self,
        contexts: Sequence[str],
        label_rules: Sequence[Mapping | LabelRule] = (),
        stratum_key: str = STRATUM_KEY,
        default_stratum: str | None = None,
    ):
        if not contexts:
            raise ValueError("mock needs at least one known context value")
        self._contexts = tuple(str(z) for z in contexts)
        self._rules = tuple(
            rule if isinstance(rule, LabelRule) else LabelRule.from_dict(rule)
            for rule in label_rules
        )
        self._stratum_key = stratum_key
        self._default_stratum = default_stratum
        # Longest value first so "unknown or undisclosed" beats "unknown".
        self._context_res = tuple(
            (z, re.compile(rf"(?<![A-Za-z0-9_]){re.escape(z)}(?![A-Za-z0-9_])"))
            for z in sorted(self._contexts, key=len, reverse=True)
        )

    @classmethod
    def for_task(cls, cfg: TaskConfig) -> "MockStructuredLm":
        """Build from a task's ``mock`` config section (and its context list)."""
        section = dict(cfg.mock or {})
        known = {"label_rules", "stratum_key", "default_stratum"}
        unknown = set(section) - known
        if unknown:
            raise ValueError(f"unknown mock config keys {sorted(unknown)}")
        return cls(
            contexts=cfg.contexts,
            label_rules=tuple(section.get("label_rules", ())),
            stratum_key=section.get("stratum_key", STRATUM_KEY),
            default_stratum=section.get("default_stratum"),
        )

    # -- dispatch ----------------------------------------------------------

    def complete(self, request: ChatTurnRequest) -> str:
        text = request.text()
        if OBFUSCATE_MARKER in text:
            return self._obfuscate(text, request)
        if ADD_MARKER in text:
            return self._add(text, request)
        if REWRITE_MARKER in text:
            return self._rewrite(text, request)
        if STRATIFIER_MARKER in text:
            return self._stratum(text)
        if LABEL_MARKER in text:
            return self._label(text)
        head = text.splitlines()[0][:60] if text else ""
        raise UnrecognizedRole(f"no role marker in request starting {head!r}")

    # -- payload handling --------------------------------------------------

    @staticmethod
    def _payload(text: str, *, upto_options: bool) -> str:
        _before, sep, payload = text.partition(TEXT_SECTION)
        if not sep:
            raise ServiceError("mock request lacks a '## Text' section")
        if upto_options:
            payload = payload.split("\n\n" + LABEL_MARKER, 1)[0]
        return payload

    def _vary_pad(
        self, st: StructuredText, request: ChatTurnRequest
    ) -> tuple[StructuredText, bool]:
        """At positive temperature a seeded draw rewrites the pad token only."""
        if request.temperature > 0 and request.seed is not None and st.has(PAD_KEY):
            return st.replace_value(PAD_KEY, f"r{request.seed % 97}"), True
        return st, False

    def _instruction_context(self, text: str, *, last: bool = False):
        """The context value named in the rewrite instruction (first line).

        ``last`` picks the final mention instead of the first: the
        single-pass rewrite instruction lists every context value before
        naming the one to insert.
        """
        line = text.split("\n", 1)[0]
        best = None
        for value, pattern in self._context_res:
            for m in pattern.finditer(line):
                better = best is None or (
                    m.start() > best[0] if last else m.start() < best[0]
                )
                if better:
                    best = (m.start(), value)
        if best is None:
            raise ServiceError(
                f"mock found no context value among {list(self._contexts)} "
                "in the rewrite instruction"
            )
        return best[1]

    # -- role behaviors ----------------------------------------------------

    def _obfuscate(self, text: str, request: ChatTurnRequest) -> str:
        payload = self._payload(text, upto_options=False)
        st = parse_structured(payload)
        changed = st.has(CTX_KEY)
        if changed:
            st = st.without(CTX_KEY)
        st, varied = self._vary_pad(st, request)
        if not (changed or varied):
            return payload
        return st.render()

    def _add(
        self, text: str, request: ChatTurnRequest, *, last_context: bool = False
    ) -> str:
        z_plus = self._instruction_context(text, last=last_context)
        payload = self._payload(text, upto_options=False)
        st = parse_structured(payload)
        if st.has(CTX_KEY):
            st = st.without(CTX_KEY)
        st = st.with_front(CTX_KEY, z_plus)
        st, _varied = self._vary_pad(st, request)
        return st.render()

    def _rewrite(self, text: str, request: ChatTurnRequest) -> str:
        # Single-pass ablation: removal and addition in one request.
        return self._add(text, request, last_context=True)

    def _stratum(self, text: str) -> str:
        payload = self._payload(text, upto_options=True)
        st = parse_structured(payload)
        value = st.get(self._stratum_key, self._default_stratum)
        return value if value is not None else _NO_ANSWER

    def _label(self, text: str) -> str:
        payload = self._payload(text, upto_options=True)
        st = parse_structured(payload)
        for rule in self._rules:
            if rule.matches(st):
                return rule.answer(st)
        return _NO_ANSWER
