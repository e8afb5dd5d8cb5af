"""Flat key-value config files: one `key = value` per line, `#` comments."""

from __future__ import annotations

from pathlib import Path

from .errors import BadConfig


def write_kv(path: str | Path, entries: dict) -> None:
    lines = [f"{key} = {value}" for key, value in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_kv(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BadConfig(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries
