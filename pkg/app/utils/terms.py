"""
Small grammar for basis terms declared as strings in run configurations.

A term is ``"1"`` or a product of factors joined by ``*``; each factor is a
column name (``x``, ``z1``, ``v``), a power (``x^2``) or a level indicator
(``x==1``). Terms evaluate on a mapping of column name to array and
differentiate analytically with respect to any column.
"""
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError

_FACTOR = re.compile(
    r"^(?P<name>[a-z_][a-z0-9_]*)(?:\^(?P<power>\d+)|==(?P<level>[-+]?\d*\.?\d+(?:e[-+]?\d+)?))?$"
)


@dataclass(frozen=True)
class Factor:
    name: str
    power: int = 1
    level: float | None = None

    def evaluate(self, column: np.ndarray) -> np.ndarray:
        if self.level is not None:
            return (column == self.level).astype(float)
        return column ** self.power


@dataclass(frozen=True)
class Term:
    text: str
    factors: tuple[Factor, ...]

    @property
    def is_constant(self) -> bool:
        return not self.factors

    @property
    def variables(self) -> frozenset:
        return frozenset(f.name for f in self.factors)

    def evaluate(self, columns: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        out = np.ones(n)
        for factor in self.factors:
            out = out * factor.evaluate(_column(columns, factor.name))
        return out

    def derivative(self, columns: Mapping[str, np.ndarray], name: str, n: int) -> np.ndarray:
        """Partial derivative of the term with respect to column ``name``."""
        out = np.zeros(n)
        for k, factor in enumerate(self.factors):
            if factor.name != name or factor.level is not None:
                continue
            column = _column(columns, name)
            piece = factor.power * column ** (factor.power - 1)
            for j, other in enumerate(self.factors):
                if j != k:
                    piece = piece * other.evaluate(_column(columns, other.name))
            out = out + piece
        return out


def _column(columns, name):
    try:
        return np.asarray(columns[name], dtype=float)
    except KeyError as exc:
        raise ConfigError(f"basis term refers to unknown column {name!r}") from exc


def parse_term(text: str) -> Term:
    cleaned = text.replace(" ", "").lower()
    if cleaned == "1":
        return Term(text=cleaned, factors=())
    factors = []
    for piece in cleaned.split("*"):
        match = _FACTOR.match(piece)
        if match is None:
            raise ConfigError(f"cannot parse basis term {text!r}")
        if match.group("level") is not None:
            factors.append(Factor(match.group("name"), level=float(match.group("level"))))
        else:
            power = int(match.group("power") or 1)
            if power < 1:
                raise ConfigError(f"power must be positive in basis term {text!r}")
            factors.append(Factor(match.group("name"), power=power))
    return Term(text=cleaned, factors=tuple(factors))


def parse_terms(texts: Sequence[str]) -> tuple[Term, ...]:
    terms = tuple(parse_term(t) for t in texts)
    if not terms:
        raise ConfigError("a basis needs at least one term")
    if len({t.text for t in terms}) != len(terms):
        raise ConfigError(f"duplicate basis terms in {list(texts)}")
    return terms


def term_matrix(terms: Sequence[Term], columns: Mapping[str, np.ndarray], n: int) -> np.ndarray:
    return np.column_stack([t.evaluate(columns, n) for t in terms])


def term_derivative_matrix(terms: Sequence[Term], columns: Mapping[str, np.ndarray],
                           name: str, n: int) -> np.ndarray:
    return np.column_stack([t.derivative(columns, name, n) for t in terms])
