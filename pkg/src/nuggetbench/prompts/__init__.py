"""Versioned prompt templates.

Each ``*.txt`` file holds a ``[system]`` and a ``[user]`` section written as
``string.Template`` text, so literal braces in code snippets need no escaping.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from string import Template

from ..io import sha256_text

_VERSION_RE = re.compile(r"^#\s*version:\s*(\S+)\s*$", re.MULTILINE)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    version: str
    system: str
    user: str

    @property
    def sha(self) -> str:
        return sha256_text(f"{self.name}\n{self.version}\n{self.system}\n{self.user}")[:16]

    def render(self, **values) -> tuple[str, str]:
        return Template(self.system).substitute(values), Template(self.user).substitute(values)


def parse_template(name: str, raw: str) -> PromptTemplate:
    m = _VERSION_RE.search(raw)
    version = m.group(1) if m else "0"
    try:
        _, rest = raw.split("[system]\n", 1)
        system, user = rest.split("[user]\n", 1)
    except ValueError:
        raise ValueError(f"template {name} needs [system] and [user] sections") from None
    return PromptTemplate(name, version, system.strip("\n"), user.rstrip("\n"))


@lru_cache(maxsize=None)
def load_template(name: str) -> PromptTemplate:
    raw = resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return parse_template(name, raw)
