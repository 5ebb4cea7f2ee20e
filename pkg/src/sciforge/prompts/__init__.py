"""Prompt templates, shipped as editable text files.

Templates use ``string.Template`` placeholders (``$name``) so literal JSON
braces in the instructions never collide with substitution. A directory of
override files with the same names takes precedence over the packaged
defaults, which keeps prompt wording a configuration concern.
"""

from __future__ import annotations

import logging
import string
from importlib import resources
from pathlib import Path

log = logging.getLogger(__name__)

TEMPLATE_NAMES = (
    "seed_candidates",
    "seed_score",
    "base_question",
    "anchor_extract",
    "anchor_question",
    "url_assess",
    "model_extract",
    "scenario_compose",
    "solver_generate",
    "answer_verify",
    "diagnose_entailment",
    "diagnose_shortcut",
    "diagnose_sanity",
    "refine_conceptual",
)


class PromptLibrary:
    """Resolves template names to text, packaged defaults plus overrides."""

    def __init__(self, overrides_dir: Path | str | None = None) -> None:
        self.overrides_dir = Path(overrides_dir) if overrides_dir else None
        self._cache: dict[str, string.Template] = {}

    def get(self, name: str) -> str:
        return self._template(name).template

    def render(self, name: str, /, **values: object) -> str:
        """Fill template ``name``; unknown or missing placeholders are errors.

        ``name`` is positional-only so a template may use it as a placeholder.
        """
        try:
            return self._template(name).substitute({k: str(v) for k, v in values.items()})
        except KeyError as exc:
            raise KeyError(f"template {name!r} is missing a value for {exc}") from exc

    def _template(self, name: str) -> string.Template:
        if name not in TEMPLATE_NAMES:
            raise KeyError(f"unknown prompt template {name!r}")
        cached = self._cache.get(name)
        if cached is not None:
            return cached
        text = None
        if self.overrides_dir is not None:
            candidate = self.overrides_dir / f"{name}.txt"
            if candidate.exists():
                text = candidate.read_text(encoding="utf-8")
        if text is None:
            text = resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
        template = string.Template(text)
        self._cache[name] = template
        return template
