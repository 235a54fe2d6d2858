"""Independent reference implementation of the proof token metric.

This is the test oracle: it mirrors the published reference structure
(string-join lexer, spaced-operator replacement, the 10**9 failure
sentinel) but is written separately from the package — recursive-descent
comment removal and a translation-table bracket scanner instead of the
package's single-pass state machines. Keep it independent; it exists to
catch bugs in src/, not to share them.
"""

from __future__ import annotations

import re

REFERENCE_OPERATORS = [
    ":=", "!=", "&&", "-.", "->", "←", "..", "...", "::", ":>",
    "<;>", ";;", "==", "||", "=>", "<=", ">=", "⁻¹", "?_",
]

_HEADER_RE = re.compile(r"(?<!\w)(theorem|lemma|example)(?!\w)")

_BRACKET_DELTA = {"(": 1, "[": 1, "{": 1, "⟨": 1,
                  ")": -1, "]": -1, "}": -1, "⟩": -1}


def reference_remove_comments(text: str) -> str:
    n = len(text)

    def skip_block(i: int) -> int:
        # i points just past an opening '/-'; returns index past its '-/'.
        while i < n:
            if text.startswith("/-", i):
                i = skip_block(i + 2)
            elif text.startswith("-/", i):
                return i + 2
            else:
                i += 1
        return n  # unterminated: swallow to end of input

    out: list[str] = []
    i = 0
    while i < n:
        ch = text[i]
        if ch == '"':
            j = i + 1
            while j < n:
                if text[j] == "\\":
                    j += 2
                elif text[j] == '"':
                    j += 1
                    break
                else:
                    j += 1
            out.append(text[i:j])
            i = j
        elif text.startswith("--", i):
            nl = text.find("\n", i)
            i = n if nl == -1 else nl
        elif text.startswith("/-", i):
            i = skip_block(i + 2)
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def reference_declaration_split(text: str) -> tuple[int, int]:
    header = _HEADER_RE.search(text)
    if header is None:
        raise ValueError("no theorem/lemma/example header")
    depth = 0
    for i in range(header.end(), len(text)):
        ch = text[i]
        delta = _BRACKET_DELTA.get(ch)
        if delta is not None:
            depth += delta
        elif depth == 0 and text[i:i + 2] == ":=":
            return header.start(), i + 2
    raise ValueError("no top-level ':=' after the header")


def reference_lexer(lean_snippet: str) -> str:
    spaced = [" ".join(op) for op in REFERENCE_OPERATORS]
    rejoin = dict(zip(spaced, REFERENCE_OPERATORS))
    tokenized_lines = []
    for line in lean_snippet.splitlines():
        tokens = []
        token = ""
        for ch in line:
            if ch == " ":
                if token:
                    tokens.append(token)
                    token = ""
            elif str.isalnum(ch) or (ch in ".'"):
                token += ch
            else:
                if token:
                    tokens.append(token)
                    token = ""
                tokens.append(ch)
        if token:
            tokens.append(token)
        tokenized_line = " ".join(tokens)
        for conn in spaced:
            if conn in tokenized_line:
                tokenized_line = tokenized_line.replace(conn, rejoin[conn])
        tokenized_lines.append(tokenized_line)
    return "\n".join(tokenized_lines)


def reference_proof_length(statement_and_proof: str) -> int:
    try:
        cleaned = reference_remove_comments(statement_and_proof)
        _, decl_end = reference_declaration_split(cleaned)
        proof = cleaned[decl_end:]
        proof_tokenized = reference_lexer(proof)
        return sum(len(l.split(" ")) for l in proof_tokenized.splitlines())
    except Exception:
        return 10 ** 9
