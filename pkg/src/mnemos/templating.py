"""Prompt templates: plain-text files with ``{name}`` placeholders.

Rendering replaces only the placeholders present in the mapping, so
literal braces elsewhere in a template (JSON examples, etc.) pass
through untouched. Templates ship inside the package; a config-supplied
directory overrides individual files by name.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def render(template: str, values: dict[str, str]) -> str:
    out = template
    for key, value in values.items():
        out = out.replace("{" + key + "}", value)
    return out


class TemplateSet:
    """Loads named templates, preferring an override directory."""

    def __init__(self, override_dir: str | Path | None = None):
        self._override_dir = Path(override_dir) if override_dir else None
        self._cache: dict[str, str] = {}

    def get(self, name: str) -> str:
        if name not in self._cache:
            self._cache[name] = self._load(name)
        return self._cache[name]

    def render(self, name: str, **values: str) -> str:
        return render(self.get(name), values)

    def _load(self, name: str) -> str:
        filename = f"{name}.txt"
        if self._override_dir is not None:
            candidate = self._override_dir / filename
            if candidate.is_file():
                return candidate.read_text(encoding="utf-8")
        ref = resources.files("mnemos") / "templates" / filename
        return ref.read_text(encoding="utf-8")
