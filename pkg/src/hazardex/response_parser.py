"""Tolerant parsing of LLM responses into food → hazards candidates.

Responses are asked for as a Python-style dictionary but arrive wrapped in
prose, echoed code, scaffold lines ("Chemicals: ..."), odd quoting or mild
format drift. The parser finds the last brace-delimited mapping that reads as
food → hazards and accommodates the common deviations: single or double
quotes, unquoted bare words, trailing commas, a bare string instead of a
one-element list, and hazards nested one level inside another mapping.
Anything beyond that is unparseable, which is a normal recorded outcome, not
an error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Iterable

from .corpus import FoodSpec
from .prompting import LlmResponse, PromptStyle

WELL_FORMED = "well_formed"
RECOVERED = "recovered"
UNPARSEABLE = "unparseable"

PARSE_STATUSES = (WELL_FORMED, RECOVERED, UNPARSEABLE)

_STRUCTURAL = "{}[]:,"
_QUOTES = "'\""
_OPENERS = "{[:,"
_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", "'": "'", '"': '"'}


@dataclass(frozen=True)
class ExtractionCandidate:
    """Parsed food → hazard terms for one (abstract, style) response."""

    abstract_key: str
    style: PromptStyle
    food_terms: dict[str, list[str]]
    parse_status: str


class _ParseFailure(Exception):
    pass


def _mapping_regions(text: str) -> list[tuple[int, int]]:
    """Spans of every balanced {...} region, ordered by closing position.

    Quote tracking only applies inside a region, and a quote only opens a
    string right after a structural delimiter, so prose apostrophes neither
    hide mappings nor unbalance the scan.
    """
    regions: list[tuple[int, int]] = []
    stack: list[int] = []
    quote: str | None = None
    last_sig = ""
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if not stack:
            if ch == "{":
                stack.append(i)
                last_sig = "{"
            i += 1
            continue
        if quote:
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                quote = None
                last_sig = "s"
            i += 1
            continue
        if ch in _QUOTES and last_sig in _OPENERS:
            quote = ch
            i += 1
            continue
        if ch == "{":
            stack.append(i)
        elif ch == "}":
            regions.append((stack.pop(), i + 1))
        if not ch.isspace():
            last_sig = ch
        i += 1
    regions.sort(key=lambda span: span[1])
    return regions


def _tokenize(src: str) -> list[tuple[str, str]]:
    tokens: list[tuple[str, str]] = []
    i, n = 0, len(src)
    while i < n:
        ch = src[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _STRUCTURAL:
            tokens.append((ch, ch))
            i += 1
            continue
        if ch in _QUOTES:
            i += 1
            buf: list[str] = []
            while i < n:
                c = src[i]
                if c == "\\" and i + 1 < n:
                    buf.append(_ESCAPES.get(src[i + 1], src[i + 1]))
                    i += 2
                    continue
                if c == ch:
                    i += 1
                    break
                buf.append(c)
                i += 1
            else:
                raise _ParseFailure("unterminated string")
            tokens.append(("str", "".join(buf)))
            continue
        j = i
        while j < n and src[j] not in _STRUCTURAL:
            j += 1
        tokens.append(("str", src[i:j].strip()))
        i = j
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str]]):
        self._tokens = tokens
        self._pos = 0

    def _peek(self) -> str:
        if self._pos >= len(self._tokens):
            raise _ParseFailure("unexpected end of mapping")
        return self._tokens[self._pos][0]

    def _take(self, expected: str | None = None) -> tuple[str, str]:
        kind = self._peek()
        if expected is not None and kind != expected:
            raise _ParseFailure(f"expected {expected!r}, found {kind!r}")
        token = self._tokens[self._pos]
        self._pos += 1
        return token

    def finished(self) -> bool:
        return self._pos == len(self._tokens)

    def parse_mapping(self, depth: int) -> list[tuple[str, object]]:
        self._take("{")
        pairs: list[tuple[str, object]] = []
        if self._peek() == "}":
            self._take()
            return pairs
        while True:
            key = self._take("str")[1]
            self._take(":")
            pairs.append((key, self._parse_value(depth)))
            kind = self._take()[0]
            if kind == ",":
                if self._peek() == "}":
                    self._take()
                    return pairs
                continue
            if kind == "}":
                return pairs
            raise _ParseFailure(f"expected ',' or '}}', found {kind!r}")

    def _parse_value(self, depth: int):
        kind = self._peek()
        if kind == "str":
            return ("str", self._take()[1])
        if kind == "[":
            return ("list", self._parse_list())
        if kind == "{":
            if depth >= 1:
                raise _ParseFailure("mapping nested deeper than one level")
            return ("map", self.parse_mapping(depth + 1))
        raise _ParseFailure(f"unexpected value token {kind!r}")

    def _parse_list(self) -> list[str]:
        self._take("[")
        items: list[str] = []
        if self._peek() == "]":
            self._take()
            return items
        while True:
            items.append(self._take("str")[1])
            kind = self._take()[0]
            if kind == ",":
                if self._peek() == "]":
                    self._take()
                    return items
                continue
            if kind == "]":
                return items
            raise _ParseFailure(f"expected ',' or ']', found {kind!r}")


def _assemble(pairs: list[tuple[str, object]]) -> tuple[dict[str, list[str]], bool]:
    recovered = False
    food_terms: dict[str, list[str]] = {}
    for key, value in pairs:
        key = key.strip()
        if not key:
            recovered = True
            continue
        tag, payload = value
        if tag == "str":
            items = [payload]
            recovered = True
        elif tag == "list":
            items = list(payload)
        else:
            # One level of nesting: keep the leaf hazard strings, drop the
            # intermediate keys.
            recovered = True
            items = []
            for _, leaf in payload:
                leaf_tag, leaf_payload = leaf
                if leaf_tag == "str":
                    items.append(leaf_payload)
                else:
                    items.extend(leaf_payload)
        if key in food_terms:
            recovered = True
        bucket = food_terms.setdefault(key, [])
        seen = {h.casefold() for h in bucket}
        for item in items:
            item = item.strip()
            if not item:
                recovered = True
                continue
            folded = item.casefold()
            if folded in seen:
                continue
            seen.add(folded)
            bucket.append(item)
    return food_terms, recovered


def extract_mapping_text(text: str) -> tuple[dict[str, list[str]], str]:
    """Parse the last readable mapping in free text.

    Returns the food → hazards dict and a parse status: well_formed when the
    mapping was already a dict of string lists, recovered when an
    accommodation fired, unparseable when no region reads as a mapping.

    Fallback after a failed region only moves to *disjoint* earlier regions:
    descending into a failed mapping's sub-braces would promote value-level
    keys into food keys.
    """
    failed: list[tuple[int, int]] = []
    for start, end in reversed(_mapping_regions(text)):
        if any(fs <= start and end <= fe for fs, fe in failed):
            continue
        try:
            parser = _Parser(_tokenize(text[start:end]))
            pairs = parser.parse_mapping(depth=0)
            if not parser.finished():
                raise _ParseFailure("trailing tokens inside mapping region")
        except _ParseFailure:
            failed.append((start, end))
            continue
        food_terms, recovered = _assemble(pairs)
        return food_terms, RECOVERED if recovered else WELL_FORMED
    return {}, UNPARSEABLE


def extract_mapping(response: LlmResponse) -> ExtractionCandidate:
    food_terms, status = extract_mapping_text(response.text)
    return ExtractionCandidate(
        abstract_key=response.abstract_key,
        style=response.style,
        food_terms=food_terms,
        parse_status=status,
    )


def gate_by_food(candidate: ExtractionCandidate, food: FoodSpec) -> ExtractionCandidate:
    """Keep only food keys naming the target food (case-insensitive substring)."""
    keywords = [kw.casefold() for kw in food.keywords]
    kept = {
        key: list(hazards)
        for key, hazards in candidate.food_terms.items()
        if any(kw in key.casefold() for kw in keywords)
    }
    return replace(candidate, food_terms=kept)


def _quote(text: str) -> str:
    return "'" + text.replace("\\", "\\\\").replace("'", "\\'") + "'"


def to_mapping_literal(candidate: ExtractionCandidate) -> str:
    """Canonical single-quoted mapping literal for a candidate."""
    inner = ", ".join(
        f"{_quote(key)}: [{', '.join(_quote(h) for h in hazards)}]"
        for key, hazards in candidate.food_terms.items()
    )
    return "{" + inner + "}"


def candidate_to_json_dict(candidate: ExtractionCandidate) -> dict:
    return {
        "abstract_key": candidate.abstract_key,
        "style": candidate.style.value,
        "parse_status": candidate.parse_status,
        "food_terms": candidate.food_terms,
    }


def candidate_from_json_dict(obj: dict) -> ExtractionCandidate:
    return ExtractionCandidate(
        abstract_key=obj["abstract_key"],
        style=PromptStyle(obj["style"]),
        food_terms={k: list(v) for k, v in obj["food_terms"].items()},
        parse_status=obj["parse_status"],
    )


def write_candidates_jsonl(path, candidates: Iterable[ExtractionCandidate]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for candidate in candidates:
            fh.write(json.dumps(candidate_to_json_dict(candidate), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def read_candidates_jsonl(path) -> list[ExtractionCandidate]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(candidate_from_json_dict(json.loads(line)))
    return out
