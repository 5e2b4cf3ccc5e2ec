"""Reward machines compiled from co-safe formulas by exhaustive progression."""

from __future__ import annotations

import functools
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Mapping

from . import ltl
from .ltl import FALSE, TRUE, Formula

DEFAULT_MAX_STATES = 1 << 12
DEFAULT_PATH_LIMIT = 10_000


class StateBlowup(RuntimeError):
    pass


class UnknownState(KeyError):
    pass


class PathLimitExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class EdgeGuard:
    """A propositional guard stored as its exact model set over ``vocab``.

    Propositions outside ``vocab`` are unconstrained: ``holds`` projects a
    label onto the vocabulary before the membership test.
    """

    vocab: frozenset
    models: frozenset

    @classmethod
    def from_formula(cls, g: Formula, vocab: Iterable[str] | None = None) -> "EdgeGuard":
        vocab = ltl.atoms(g) if vocab is None else frozenset(vocab) | ltl.atoms(g)
        return cls(frozenset(vocab), ltl.satisfying_assignments(g, vocab))

    @classmethod
    def from_text(cls, text: str, vocab: Iterable[str] | None = None) -> "EdgeGuard":
        return cls.from_formula(ltl.to_nnf(ltl.parse(text)), vocab)

    def holds(self, label: Iterable[str]) -> bool:
        return self.vocab.intersection(label) in self.models

    @property
    def is_empty(self) -> bool:
        return not self.models

    def reduced(self) -> "EdgeGuard":
        """Same guard over the smallest vocabulary: propositions it ignores are dropped."""
        vocab = set(self.vocab)
        models = set(self.models)
        for p in sorted(self.vocab):
            if all((m ^ {p}) in models for m in models):
                vocab.discard(p)
                models = {m - {p} for m in models}
        return EdgeGuard(frozenset(vocab), frozenset(models))

    @cached_property
    def display(self) -> str:
        return _dnf_text(self.vocab, self.models)

    def __str__(self) -> str:
        return self.display


@functools.lru_cache(maxsize=1 << 14)
def _dnf_text(vocab: frozenset, models: frozenset) -> str:
    names = sorted(vocab)
    if not models:
        return "false"
    if len(models) == 1 << len(names):
        return "true"
    from sympy import Symbol
    from sympy.logic import SOPform

    symbols = [Symbol(n) for n in names]
    minterms = [[int(n in m) for n in names] for m in models]
    expr = SOPform(symbols, minterms)
    return _sympy_to_text(expr)


def _sympy_to_text(expr) -> str:
    from sympy import And, Not, Or, Symbol

    if isinstance(expr, Symbol):
        return expr.name
    if isinstance(expr, Not):
        return "!" + expr.args[0].name
    if isinstance(expr, And):
        return "(" + " & ".join(sorted(_sympy_to_text(a) for a in expr.args)) + ")"
    if isinstance(expr, Or):
        return " | ".join(sorted(_sympy_to_text(a) for a in expr.args))
    if expr is True or str(expr) == "True":
        return "true"
    return "false"


class RewardMachine:
    """Deterministic transition system over truth assignments.

    States are canonical formulas; ``TRUE`` is the accepting sink and
    ``FALSE`` the failure sink.  ``edges`` maps ``(source, target)`` to the
    guard of that transition, self edges included.
    """

    def __init__(self, formula: Formula, vocab: frozenset, states: tuple, edges: Mapping, pruned: bool = False):
        self.formula = formula
        self.vocab = frozenset(vocab)
        self.states = tuple(states)
        self.edges = dict(edges)
        self.pruned = pruned
        self._index = {q: i for i, q in enumerate(self.states)}
        self._out: dict[Formula, list] = {q: [] for q in self.states}
        for (src, dst), guard in self.edges.items():
            if src != dst:
                self._out[src].append((dst, guard))
        for q in self._out:
            self._out[q].sort(key=lambda e: self._index[e[0]])
        self._delta = {}
        if not pruned:
            for (src, dst), guard in self.edges.items():
                for m in guard.models:
                    self._delta[src, m] = dst

    @property
    def initial(self) -> Formula:
        return self.states[0]

    @property
    def accepting(self) -> Formula:
        return TRUE

    @property
    def failure(self) -> Formula | None:
        return FALSE if FALSE in self._index else None

    def __contains__(self, q) -> bool:
        return q in self._index

    def __len__(self) -> int:
        return len(self.states)

    def index(self, q: Formula) -> int:
        return self._index[q]

    def _check(self, q):
        if q not in self._index:
            raise UnknownState(ltl.to_text(q))

    def transition(self, q: Formula, label: Iterable[str]) -> Formula:
        """Successor state on ``label`` (propositions outside the vocabulary are ignored)."""
        self._check(q)
        return self._delta[q, self.vocab.intersection(label)]

    def self_edge(self, q: Formula) -> EdgeGuard:
        self._check(q)
        return self.edges.get((q, q), EdgeGuard(self.vocab, frozenset()))

    def out_edges(self, q: Formula) -> list[tuple[Formula, EdgeGuard]]:
        self._check(q)
        return list(self._out[q])

    @cached_property
    def dead_states(self) -> frozenset:
        """Failure-equivalent states: those with no path to the accepting state."""
        preds: dict[Formula, set] = {q: set() for q in self.states}
        for (src, dst) in self.edges:
            preds[dst].add(src)
        alive = set()
        if TRUE in self._index:
            alive.add(TRUE)
            todo = [TRUE]
            while todo:
                q = todo.pop()
                for p in preds[q]:
                    if p not in alive:
                        alive.add(p)
                        todo.append(p)
        return frozenset(q for q in self.states if q not in alive)

    def is_dead(self, q: Formula) -> bool:
        return q in self.dead_states

    def failure_guards(self, q: Formula) -> frozenset:
        """Guards of the edges leaving ``q`` into failure-equivalent states."""
        return frozenset(g for dst, g in self.out_edges(q) if dst in self.dead_states)

    def to_dot(self) -> str:
        lines = ["digraph rm {", "  rankdir=LR;"]
        for q in self.states:
            shape = "doublecircle" if q == TRUE else "circle"
            style = ", style=filled, fillcolor=gray" if q in self.dead_states else ""
            lines.append(f'  s{self._index[q]} [label="{ltl.to_text(q)}", shape={shape}{style}];')
        lines.append("  init [shape=point]; init -> s0;")
        for (src, dst), guard in self.edges.items():
            lines.append(f'  s{self._index[src]} -> s{self._index[dst]} [label="{guard.display}"];')
        lines.append("}")
        return "\n".join(lines)

    def __repr__(self):
        return f"RewardMachine({ltl.to_text(self.formula)!r}, states={len(self.states)})"


@functools.lru_cache(maxsize=4096)
def build_rm(f: Formula, vocab: frozenset | None = None, max_states: int = DEFAULT_MAX_STATES) -> RewardMachine:
    """Breadth-first progression over every assignment of ``vocab`` (default: atoms of ``f``)."""
    if not ltl.is_nnf(f):
        raise ltl.LtlError("reward machines are built from formulas in negation normal form")
    vocab = ltl.atoms(f) if vocab is None else frozenset(vocab) | ltl.atoms(f)
    sigmas = list(ltl.all_assignments(vocab))
    everything = frozenset(sigmas)
    initial = ltl.simplify(f)
    states = [initial]
    seen = {initial}
    edges = {}
    queue = deque([initial])
    while queue:
        q = queue.popleft()
        if q == TRUE or q == FALSE:
            edges[q, q] = EdgeGuard(vocab, everything)
            continue
        groups: dict[Formula, list] = {}
        for sigma in sigmas:
            groups.setdefault(ltl.progress(q, sigma), []).append(sigma)
        for dst, models in groups.items():
            if dst not in seen:
                if len(seen) >= max_states:
                    raise StateBlowup(f"more than {max_states} states for {ltl.to_text(f)}")
                seen.add(dst)
                states.append(dst)
                queue.append(dst)
            edges[q, dst] = EdgeGuard(vocab, frozenset(models))
    return RewardMachine(f, vocab, tuple(states), edges)


def out_edges(rm: RewardMachine, q: Formula):
    return rm.out_edges(q)


def self_edge(rm: RewardMachine, q: Formula) -> EdgeGuard:
    return rm.self_edge(q)


EdgePredicate = Callable[[EdgeGuard, EdgeGuard, Formula, Formula], bool]


def prune(rm: RewardMachine, has_feasible_option: EdgePredicate, root: Formula | None = None) -> RewardMachine:
    """Drop plan edges without a feasible option, then states unreachable from ``root``.

    Self edges and edges into failure-equivalent states are retained: the
    latter stay as hazard knowledge but are never traversed by a path.
    """
    root = rm.initial if root is None else root
    rm._check(root)
    dead = rm.dead_states
    kept = {}
    for (src, dst), guard in rm.edges.items():
        if src == dst or dst in dead or has_feasible_option(rm.self_edge(src), guard, src, dst):
            kept[src, dst] = guard
    succ: dict[Formula, list] = {}
    for (src, dst) in kept:
        succ.setdefault(src, []).append(dst)
    reach = {root}
    todo = [root]
    while todo:
        q = todo.pop()
        for d in succ.get(q, ()):
            if d not in reach:
                reach.add(d)
                todo.append(d)
    states = tuple(q for q in rm.states if q in reach)
    if root != rm.initial:
        states = (root,) + tuple(q for q in states if q != root)
    edges = {k: g for k, g in kept.items() if k[0] in reach}
    pruned = RewardMachine(rm.formula, rm.vocab, states, edges, pruned=True)
    # failure knowledge comes from the unpruned machine
    pruned.__dict__["dead_states"] = frozenset(q for q in states if q in dead)
    return pruned


def enumerate_paths(rm: RewardMachine, q: Formula, limit: int = DEFAULT_PATH_LIMIT) -> list[tuple]:
    """All simple paths from ``q`` to the accepting state avoiding failure-equivalent states.

    A path is a tuple of ``(source, target, guard)`` edges, self edges excluded.
    """
    rm._check(q)
    dead = rm.dead_states
    if q == TRUE:
        return [()]
    if q in dead:
        return []
    paths = []
    on_path = {q}
    stack: list = []

    def dfs(u):
        for v, guard in rm.out_edges(u):
            if v in on_path or v in dead:
                continue
            stack.append((u, v, guard))
            if v == TRUE:
                paths.append(tuple(stack))
                if len(paths) > limit:
                    raise PathLimitExceeded(f"more than {limit} paths from {ltl.to_text(q)}")
            else:
                on_path.add(v)
                dfs(v)
                on_path.discard(v)
            stack.pop()

    dfs(q)
    return paths


def first_edges(rm: RewardMachine, q: Formula) -> list[tuple[Formula, EdgeGuard]]:
    """Out-edges of ``q`` that begin at least one simple path to acceptance.

    Equal to the set of first edges of ``enumerate_paths(rm, q)`` without
    enumerating the paths themselves.
    """
    rm._check(q)
    dead = rm.dead_states
    if q == TRUE or q in dead:
        return []
    preds: dict[Formula, list] = {}
    for (src, dst) in rm.edges:
        if src != dst and dst not in dead and src != q:
            preds.setdefault(dst, []).append(src)
    alive = {TRUE}
    todo = [TRUE]
    while todo:
        v = todo.pop()
        for u in preds.get(v, ()):
            if u not in alive:
                alive.add(u)
                todo.append(u)
    return [(dst, g) for dst, g in rm.out_edges(q) if dst in alive]
