"""Symbolic message values and per-party knowledge.

Hashing is symbolic: anyone holding ``Secret(s)`` can form ``HashOf(s)``,
but nothing yields ``Secret(s)`` from ``HashOf(s)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union


@dataclass(frozen=True, order=True)
class Token:
    name: str

    def __str__(self):
        return f"token:{self.name}"


@dataclass(frozen=True, order=True)
class Secret:
    name: str

    def __str__(self):
        return f"secret:{self.name}"


@dataclass(frozen=True, order=True)
class HashOf:
    secret: str

    def __str__(self):
        return f"hash:{self.secret}"


@dataclass(frozen=True, order=True)
class Plain:
    literal: Union[int, str]

    def __str__(self):
        return f"plain:{self.literal}"


@dataclass(frozen=True)
class Composite:
    items: tuple

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def __str__(self):
        return "[" + ",".join(str(v) for v in self.items) + "]"


Value = Union[Token, Secret, HashOf, Plain, Composite]

_KIND_RANK = {Plain: 0, Token: 1, HashOf: 2, Secret: 3, Composite: 4}


def sort_key(value) -> tuple:
    """Total order across value kinds, used for canonical orderings."""
    if isinstance(value, Composite):
        return (4, tuple(sort_key(v) for v in value.items))
    field = value.literal if isinstance(value, Plain) else getattr(value, "name", None)
    if isinstance(value, HashOf):
        field = value.secret
    # ints sort before strings within Plain
    return (_KIND_RANK[type(value)], (0, field, "") if isinstance(field, int) else (1, 0, str(field)))


def to_text(value) -> str:
    return str(value)


def from_text(text: str):
    """Inverse of ``str(value)`` for the scenario/trace formats."""
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise ValueError(f"unbalanced composite {text!r}")
        inner = text[1:-1]
        if not inner:
            return Composite(())
        parts, depth, start = [], 0, 0
        for i, ch in enumerate(inner):
            if ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
            elif ch == "," and depth == 0:
                parts.append(inner[start:i])
                start = i + 1
        parts.append(inner[start:])
        return Composite(tuple(from_text(p) for p in parts))
    kind, sep, body = text.partition(":")
    if not sep:
        raise ValueError(f"value {text!r} lacks a kind prefix")
    if kind == "token":
        return Token(body)
    if kind == "secret":
        return Secret(body)
    if kind == "hash":
        return HashOf(body)
    if kind == "plain":
        try:
            return Plain(int(body))
        except ValueError:
            return Plain(body)
    raise ValueError(f"unknown value kind {kind!r}")


def atoms(value) -> Iterable:
    if isinstance(value, Composite):
        for item in value.items:
            yield from atoms(item)
    else:
        yield value


class KnowledgeViolation(RuntimeError):
    pass


class KnowledgeSet:
    """Atoms a party holds. Membership is closure under hashing and tupling."""

    __slots__ = ("_atoms",)

    def __init__(self, values: Iterable = ()):
        self._atoms = frozenset(a for v in values for a in atoms(v))

    def can_produce(self, value) -> bool:
        if isinstance(value, Composite):
            return all(self.can_produce(v) for v in value.items)
        if isinstance(value, (Plain, Token)):
            return True
        if isinstance(value, HashOf):
            return value in self._atoms or Secret(value.secret) in self._atoms
        return value in self._atoms

    __contains__ = can_produce

    def absorb(self, values: Iterable) -> "KnowledgeSet":
        new = frozenset(a for v in values for a in atoms(v))
        if new <= self._atoms:
            return self
        out = KnowledgeSet()
        out._atoms = self._atoms | new
        return out

    def new_atoms(self, values: Iterable) -> list:
        return sorted({a for v in values for a in atoms(v)} - self._atoms, key=sort_key)

    def secrets(self) -> frozenset:
        return frozenset(a for a in self._atoms if isinstance(a, Secret))

    def __iter__(self):
        return iter(sorted(self._atoms, key=sort_key))

    def __le__(self, other: "KnowledgeSet") -> bool:
        return self._atoms <= other._atoms

    def __eq__(self, other):
        return isinstance(other, KnowledgeSet) and self._atoms == other._atoms

    def __hash__(self):
        return hash(self._atoms)

    def __repr__(self):
        return "KnowledgeSet({" + ", ".join(str(a) for a in self) + "})"
