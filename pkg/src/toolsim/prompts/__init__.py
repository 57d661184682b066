"""Prompt templates shipped as editable text files with ``${placeholder}`` slots."""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from string import Template


def load_template(name: str, directory: str | Path | None = None) -> Template:
    if directory is not None:
        return Template(Path(directory, f"{name}.txt").read_text(encoding="utf-8"))
    return Template(resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8"))


def render(template: str, /, directory: str | Path | None = None, **values: object) -> str:
    """Fill the named template; a missing placeholder value raises ``KeyError``."""
    return load_template(template, directory).substitute({k: str(v) for k, v in values.items()})
