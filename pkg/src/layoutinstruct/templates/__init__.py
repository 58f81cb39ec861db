"""Instruction and prompt templates shipped as editable text resources.

Instruction templates are one per line. Prompt templates are whole files.
Placeholders are written ``{{name}}``.
"""
from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")


class TemplateError(KeyError):
    def __str__(self):
        return self.args[0] if self.args else ""


@lru_cache(maxsize=None)
def load_text(name: str) -> str:
    try:
        return resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise TemplateError(f"no template resource named {name!r}") from None


@lru_cache(maxsize=None)
def load_lines(name: str) -> tuple[str, ...]:
    return tuple(line for line in load_text(name).splitlines() if line.strip())


def placeholders(template: str) -> list[str]:
    return list(dict.fromkeys(_PLACEHOLDER.findall(template)))


def fill(template: str, bindings: dict) -> str:
    missing = [p for p in placeholders(template) if p not in bindings]
    if missing:
        raise TemplateError(f"unresolved placeholders: {', '.join(missing)}")
    return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), template)
