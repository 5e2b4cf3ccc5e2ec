"""Seeded sampling of Hard, Soft, StrictlySoft, NoOrders and Mixed task formulas.

A task is a set of subtask propositions plus precedence links between
consecutive subtasks of a random permutation, so the links always form
disjoint chains.  Links render as:

    hard           a before b   ->  !b U a
    soft           a then b     ->  F(a & F b)
    strictly soft  a then b     ->  F(a & X F b)

Consecutive soft links nest into one chain ``F(a & F(b & F c))``.  Every
subtask not already forced by a link gets its own ``F p`` conjunct.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import ltl
from .gridworld import PROPOSITIONS
from .ltl import Atom, Eventually, Formula, NegAtom, Next, Until


class InfeasibleParams(ValueError):
    pass


class ExhaustedVocabulary(RuntimeError):
    pass


class SpecType(enum.Enum):
    HARD = "hard"
    SOFT = "soft"
    STRICTLY_SOFT = "strictly_soft"
    NO_ORDERS = "no_orders"
    MIXED = "mixed"

    @classmethod
    def parse(cls, text: str) -> "SpecType":
        key = text.lower().replace("-", "_").replace(" ", "_")
        aliases = {"strictlysoft": "strictly_soft", "noorders": "no_orders"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown spec type {text!r}; expected one of {[t.value for t in cls]}") from None


class Link(enum.Enum):
    HARD = "hard"
    SOFT = "soft"
    STRICT = "strict"


_LINKS = {SpecType.HARD: Link.HARD, SpecType.SOFT: Link.SOFT, SpecType.STRICTLY_SOFT: Link.STRICT}


@dataclass(frozen=True)
class GenParams:
    subtasks: tuple[int, int] = (2, 5)
    constraints: tuple[int, int] = (1, 3)  # clamped to subtasks - 1; NoOrders uses none
    vocab: tuple[str, ...] = PROPOSITIONS
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.subtasks
        clo, chi = self.constraints
        if not 1 <= lo <= hi:
            raise InfeasibleParams(f"bad subtask range {self.subtasks}")
        if not 0 <= clo <= chi:
            raise InfeasibleParams(f"bad constraint range {self.constraints}")
        if len(set(self.vocab)) != len(self.vocab):
            raise InfeasibleParams("vocabulary has duplicates")
        if hi > len(self.vocab):
            raise InfeasibleParams(f"{hi} subtasks need at least {hi} propositions, have {len(self.vocab)}")
        if clo > hi - 1:
            raise InfeasibleParams(f"{clo} precedence links need at least {clo + 1} subtasks")


def render(subtasks: Sequence[str], links: dict) -> Formula:
    """Formula for ``subtasks`` (in precedence order) with ``links[i]`` joining i and i+1."""
    parts = []
    covered = set()
    for i, kind in links.items():
        if kind is Link.HARD:
            parts.append(Until(NegAtom(subtasks[i + 1]), Atom(subtasks[i])))
            covered.add(subtasks[i])
    # maximal runs of soft/strict links become one nested chain
    i = 0
    n = len(subtasks)
    while i < n - 1:
        if links.get(i) in (Link.SOFT, Link.STRICT):
            j = i
            while links.get(j) in (Link.SOFT, Link.STRICT):
                j += 1
            body: Formula = Atom(subtasks[j])
            for k in range(j - 1, i - 1, -1):
                later = Eventually(body)
                if links[k] is Link.STRICT:
                    later = Next(later)
                body = ltl.And(Atom(subtasks[k]), later)
            parts.append(Eventually(body))
            covered.update(subtasks[i : j + 1])
            i = j
        else:
            i += 1
    for p in subtasks:
        if p not in covered:
            parts.append(Eventually(Atom(p)))
    return ltl.simplify(ltl.And(*parts) if len(parts) > 1 else parts[0])


def sample_spec(t: SpecType, p: GenParams, rng: random.Random | None = None) -> Formula:
    rng = random.Random(p.seed) if rng is None else rng
    m = rng.randint(*p.subtasks)
    order = rng.sample(list(p.vocab), m)
    if t is SpecType.NO_ORDERS or m < 2:
        k = 0
    else:
        lo, hi = p.constraints
        k = rng.randint(min(lo, m - 1), min(hi, m - 1))
    positions = sorted(rng.sample(range(m - 1), k)) if k else []
    links = {}
    for i in positions:
        links[i] = rng.choice(list(Link)) if t is SpecType.MIXED else _LINKS[t]
    return render(order, links)


def sample_set(t: SpecType, n: int, p: GenParams, exclude: Sequence[Formula] = (), max_tries: int = 10_000) -> list[Formula]:
    """``n`` distinct formulas; a smaller ``n`` with the same params gives a prefix."""
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = random.Random(f"{t.value}:{p.seed}")
    seen = set(exclude)
    out = []
    misses = 0
    while len(out) < n:
        f = sample_spec(t, p, rng)
        if f in seen:
            misses += 1
            if misses > max_tries:
                raise ExhaustedVocabulary(f"only {len(out)} distinct {t.value} formulas after {max_tries} repeats")
            continue
        misses = 0
        seen.add(f)
        out.append(f)
    return out


def write_spec_file(path: str | Path, formulas: Sequence[Formula], t: SpecType | None = None, p: GenParams | None = None) -> None:
    lines = []
    if t is not None:
        lines.append(f"# type: {t.value}")
    if p is not None:
        lines.append(f"# subtasks: {p.subtasks[0]}-{p.subtasks[1]}")
        lines.append(f"# constraints: {p.constraints[0]}-{p.constraints[1]}")
        lines.append(f"# seed: {p.seed}")
    lines.extend(ltl.to_text(f) for f in formulas)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_spec_file(path: str | Path, vocab=None) -> list[Formula]:
    """One formula per line; ``#`` lines and blank lines are skipped."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.append(ltl.simplify(ltl.to_nnf(ltl.parse(line, vocab))))
    return out
