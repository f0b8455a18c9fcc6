"""Flat ``key = value`` config files for the command line.

Grammar, one statement per line::

    line    := blank | comment | pair
    comment := "#" anything
    pair    := key ws? "=" ws? value ws? comment?
    key     := [A-Za-z_][A-Za-z0-9_-]*
    value   := '"' chars '"' | bare

A quoted value is a string with ``\\"`` and ``\\\\`` escapes. A bare value
runs to an unquoted ``#`` or end of line and is trimmed; ``true``/``false``
become booleans, integer and float literals become numbers, anything else
stays a string. Keys are case-sensitive; ``-`` and ``_`` are
interchangeable. No sections, arrays or repeated keys.
"""
from __future__ import annotations

import re
from pathlib import Path

from .errors import ParseError

_KEY = re.compile(r"[A-Za-z_][A-Za-z0-9_-]*")
_INT = re.compile(r"[+-]?\d+")
_FLOAT = re.compile(r"[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?|[+-]?(inf|nan)")


def _bare(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    if _INT.fullmatch(text):
        return int(text)
    if _FLOAT.fullmatch(text):
        return float(text)
    return text


def _quoted(s: str, lineno: int):
    out = []
    i = 1
    while i < len(s):
        c = s[i]
        if c == "\\":
            if i + 1 >= len(s) or s[i + 1] not in '"\\':
                raise ParseError("bad escape in quoted value", lineno)
            out.append(s[i + 1])
            i += 2
            continue
        if c == '"':
            rest = s[i + 1:].strip()
            if rest and not rest.startswith("#"):
                raise ParseError("trailing text after quoted value", lineno)
            return "".join(out)
        out.append(c)
        i += 1
    raise ParseError("unterminated quoted value", lineno)


def parse_config(text: str) -> dict:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, rest = line.partition("=")
        key = key.strip()
        if not sep:
            raise ParseError("expected key = value", lineno)
        if not _KEY.fullmatch(key):
            raise ParseError(f"invalid key {key!r}", lineno)
        norm = key.replace("-", "_")
        if norm in cfg:
            raise ParseError(f"repeated key {key!r}", lineno)
        rest = rest.strip()
        if rest.startswith('"'):
            value = _quoted(rest, lineno)
        else:
            value = rest.split("#", 1)[0].strip()
            if not value:
                raise ParseError(f"empty value for {key!r}", lineno)
            value = _bare(value)
        cfg[norm] = value
    return cfg


def load_config(path) -> dict:
    return parse_config(Path(path).read_text())
