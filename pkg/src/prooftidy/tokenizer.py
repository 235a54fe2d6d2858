"""Syntax-aware Lean proof lexing, length metric, and segmentation.

The token metric reproduces a published reference lexer, quirks included:
underscores split identifiers, dots join them, blank lines count one token.
Fidelity to that metric outranks lexical elegance — do not "fix" these.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass

from .errors import MalformedDeclaration

log = logging.getLogger(__name__)

#: Spaced operator sequences re-joined into single tokens, in application order.
LEAN_OPERATORS = [
    ":=", "!=", "&&", "-.", "->", "←", "..", "...", "::", ":>",
    "<;>", ";;", "==", "||", "=>", "<=", ">=", "⁻¹", "?_",
]

#: Characters that extend a token alongside alphanumerics. Underscore is
#: deliberately absent: the metric splits identifiers at underscores.
TOKEN_JOIN_CHARS = ".'"

#: Returned by :func:`proof_length` when the input cannot be measured.
LENGTH_FAILURE_SENTINEL = 10 ** 9

_DECL_KEYWORD_RE = re.compile(r"\b(theorem|lemma|example)\b")

_OPEN_BRACKETS = "([{⟨"
_CLOSE_BRACKETS = ")]}⟩"


@dataclass(frozen=True)
class TokenizedProof:
    """Per-line token lists plus the total count.

    Two reference-metric quirks are preserved: an interior line with no
    tokens is represented as a single empty token (it counts one), and a
    trailing token-free line is dropped (it counts zero).
    """

    lines: list[list[str]]
    total: int


@dataclass(frozen=True)
class ProofSpan:
    """A contiguous run of proof lines, 1-based and inclusive."""

    line_start: int
    line_end: int
    text: str


def remove_comments(source: str) -> str:
    """Strip Lean 4 comments, leaving everything else byte-identical.

    ``--`` runs to end of line (the newline survives); ``/- ... -/`` nests
    and is removed together with any newlines it spans. Double-quoted string
    literals are opaque: comment markers inside them are ignored. An
    unterminated block comment is stripped to end of input with a warning.
    """
    out: list[str] = []
    i = 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == '"':
            # String literal: copy verbatim through the closing quote.
            out.append(ch)
            i += 1
            while i < n:
                out.append(source[i])
                if source[i] == "\\" and i + 1 < n:
                    out.append(source[i + 1])
                    i += 2
                    continue
                if source[i] == '"':
                    i += 1
                    break
                i += 1
            continue
        if source.startswith("/-", i):
            depth = 1
            i += 2
            while i < n and depth > 0:
                if source.startswith("/-", i):
                    depth += 1
                    i += 2
                elif source.startswith("-/", i):
                    depth -= 1
                    i += 2
                else:
                    i += 1
            if depth > 0:
                log.warning("unterminated block comment; stripped to end of input")
            continue
        if source.startswith("--", i):
            while i < n and source[i] != "\n":
                i += 1
            continue
        out.append(ch)
        i += 1
    return "".join(out)


def split_declaration(statement_and_proof: str) -> int:
    """Return the offset just past the ``:=`` that ends the declaration.

    The declaration ends at the first ``:=`` occurring at zero nesting depth
    of ``()[]{}⟨⟩`` after the theorem/lemma/example keyword; the proof is
    ``text[offset:]``.

    Raises:
        MalformedDeclaration: no header keyword, or no top-level ``:=``.
    """
    m = _DECL_KEYWORD_RE.search(statement_and_proof)
    if m is None:
        raise MalformedDeclaration("no theorem/lemma/example header found")
    depth = 0
    i = m.end()
    n = len(statement_and_proof)
    while i < n:
        ch = statement_and_proof[i]
        if ch in _OPEN_BRACKETS:
            depth += 1
        elif ch in _CLOSE_BRACKETS:
            depth -= 1
        elif depth == 0 and statement_and_proof.startswith(":=", i):
            return i + 2
        i += 1
    raise MalformedDeclaration("no top-level ':=' after declaration header")


def lex(proof_text: str) -> TokenizedProof:
    """Tokenize proof text with the reference character classes.

    A token grows over alphanumerics and ``._'``; every other non-space
    character is emitted alone; spaced operator sequences from
    ``LEAN_OPERATORS`` are then re-joined in order. Comments are assumed
    already removed. Total function: never raises.
    """
    spaced = [" ".join(op) for op in LEAN_OPERATORS]
    lines: list[list[str]] = []
    for line in proof_text.splitlines():
        tokens: list[str] = []
        token = ""
        for ch in line:
            if ch == " ":
                if token:
                    tokens.append(token)
                    token = ""
            elif ch.isalnum() or ch in TOKEN_JOIN_CHARS:
                token += ch
            else:
                if token:
                    tokens.append(token)
                    token = ""
                tokens.append(ch)
        if token:
            tokens.append(token)
        joined = " ".join(tokens)
        for op, op_spaced in zip(LEAN_OPERATORS, spaced):
            if op_spaced in joined:
                joined = joined.replace(op_spaced, op)
        # A blank line splits to one empty token, matching the reference count.
        lines.append(joined.split(" "))
    if lines and lines[-1] == [""]:
        # The reference joins lines with "\n" and re-splits, which swallows
        # exactly one trailing token-free line.
        lines.pop()
    total = sum(len(tokens) for tokens in lines)
    return TokenizedProof(lines=lines, total=total)


def proof_length(statement_and_proof: str) -> int:
    """Token count of the proof part of a full declaration.

    Comments are removed, the declaration is split off at its top-level
    ``:=``, and the remainder is lexed. Any failure yields the sentinel
    ``LENGTH_FAILURE_SENTINEL`` rather than an exception.
    """
    try:
        cleaned = remove_comments(statement_and_proof)
        offset = split_declaration(cleaned)
        return lex(cleaned[offset:]).total
    except Exception:
        return LENGTH_FAILURE_SENTINEL


def _line_count(text: str) -> int:
    # An empty document still occupies one (empty) line.
    return max(1, len(text.splitlines()))


def _span_for(lines: list[str], start: int, end: int) -> ProofSpan:
    return ProofSpan(start, end, "\n".join(lines[start - 1:end]))


def segment(proof: str, sizes: list[int]) -> list[ProofSpan]:
    """Cut a proof into fixed-size line windows at several granularities.

    For each size, consecutive non-overlapping windows cover all lines (the
    last window may be short). Windows that coincide across granularities
    are deduplicated by (line_start, line_end); a whole-proof span is always
    appended last.
    """
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError("sizes must be non-empty and all >= 1")
    lines = proof.splitlines()
    if not lines:
        return [ProofSpan(1, 1, "")]
    n = len(lines)
    spans: list[ProofSpan] = []
    seen: set[tuple[int, int]] = set()
    for size in sizes:
        start = 1
        while start <= n:
            end = min(start + size - 1, n)
            if (start, end) not in seen:
                seen.add((start, end))
                spans.append(_span_for(lines, start, end))
            start = end + 1
    spans.append(_span_for(lines, 1, n))
    return spans


def jitter_boundaries(
    span: ProofSpan,
    document: str,
    max_jitter: int,
    seed: int | random.Random,
) -> ProofSpan:
    """Shift both span boundaries by independent uniform offsets.

    Offsets are drawn from [-max_jitter, +max_jitter], clamped to the
    document's line range, and reordered if they cross. Deterministic for a
    fixed seed.
    """
    if max_jitter < 0:
        raise ValueError("max_jitter must be >= 0")
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    n = _line_count(document)
    lines = document.splitlines()
    start = span.line_start + rng.randint(-max_jitter, max_jitter)
    end = span.line_end + rng.randint(-max_jitter, max_jitter)
    start = min(max(start, 1), n)
    end = min(max(end, 1), n)
    if start > end:
        start, end = end, start
    return _span_for(lines if lines else [""], start, end)
