"""Strict canonical JSON-lines handling for persisted chained stores.

Files written through ``dump_line`` have exactly one canonical JSON object
per line and end with a newline. ``iter_strict`` refuses anything else:
non-canonical bytes, stray whitespace, or a missing final newline all
raise, so byte-level tampering either fails parsing here or changes the
parsed content (and then fails the caller's chain check).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterator


class MalformedLineError(ValueError):
    pass


def dump_line(obj: dict[str, Any]) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True) + "\n"


def iter_strict(path: Path) -> Iterator[dict[str, Any]]:
    content = path.read_text(encoding="utf-8")
    if not content:
        return
    if not content.endswith("\n"):
        raise MalformedLineError("file does not end with a newline")
    for piece in content[:-1].split("\n"):
        try:
            obj = json.loads(piece)
        except json.JSONDecodeError as exc:
            raise MalformedLineError(f"invalid JSON line: {exc}") from exc
        if not isinstance(obj, dict):
            raise MalformedLineError("line is not a JSON object")
        if json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True) != piece:
            raise MalformedLineError("line is not in canonical form")
        yield obj
