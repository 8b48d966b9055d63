from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from ..errors import TemplateError

logger = logging.getLogger(__name__)

_SLOT = re.compile(r"\$\{(\w+)\}")


@dataclass(frozen=True)
class Template:
    name: str
    body: str
    required: frozenset
    source: str = ""

    def __post_init__(self):
        slots = set(_SLOT.findall(self.body))
        undeclared = slots - set(self.required)
        if undeclared:
            raise TemplateError(f"template {self.name}: undeclared placeholders {sorted(undeclared)}")

    @property
    def placeholders(self) -> set[str]:
        return set(_SLOT.findall(self.body))

    def render(self, **bindings) -> str:
        return render(self, bindings)


def render(template: Template, bindings: dict) -> str:
    """Substitute every ``${name}`` slot; nothing else in the body is touched."""
    missing = sorted(set(template.required) - set(bindings))
    if missing:
        raise TemplateError(f"template {template.name}: unbound placeholder(s) {', '.join(missing)}")
    extra = sorted(set(bindings) - set(template.required))
    if extra:
        logger.warning("template %s: ignoring unknown bindings %s", template.name, extra)
    return _SLOT.sub(lambda m: str(bindings[m.group(1)]), template.body)


def parse_template(text: str, default_name: str = "") -> Template:
    if not text.startswith("---\n"):
        raise TemplateError(f"template {default_name}: missing front matter")
    end = text.find("\n---\n", 4)
    if end < 0:
        raise TemplateError(f"template {default_name}: unterminated front matter")
    header = yaml.safe_load(text[4:end]) or {}
    body = text[end + 5:]
    if body.endswith("\n"):
        body = body[:-1]
    return Template(
        name=header.get("name", default_name),
        body=body,
        required=frozenset(header.get("required") or ()),
        source=header.get("source", ""),
    )


def load_template(path) -> Template:
    path = Path(path)
    return parse_template(path.read_text(encoding="utf-8"), path.stem)


class Catalog:
    """Templates keyed by name, read from a directory of ``*.txt`` files.

    Without ``directory`` the catalog shipped with the package is used.
    """

    def __init__(self, directory=None):
        if directory is None:
            root = resources.files("agentcf.prompts").joinpath("catalog")
            files = [(p.name, p.read_text(encoding="utf-8")) for p in root.iterdir() if p.name.endswith(".txt")]
        else:
            files = [(p.name, p.read_text(encoding="utf-8")) for p in Path(directory).glob("*.txt")]
        self.templates = {}
        for fname, text in sorted(files):
            t = parse_template(text, fname[:-4])
            self.templates[t.name] = t

    def __getitem__(self, name) -> Template:
        try:
            return self.templates[name]
        except KeyError:
            raise TemplateError(f"no template named {name!r} in catalog") from None

    def __contains__(self, name):
        return name in self.templates

    def render(self, name: str, **bindings) -> str:
        return render(self[name], bindings)
