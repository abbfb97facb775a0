"""Prompt template assets.

Templates are plain text with named placeholders filled by literal
substitution (never ``str.format``, so braces in document text are safe).
"""

from __future__ import annotations

from importlib import resources


def load_template(name: str) -> str:
    return resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render(template: str, **fields: str) -> str:
    out = template
    for key, value in fields.items():
        out = out.replace("{" + key + "}", value)
    return out
