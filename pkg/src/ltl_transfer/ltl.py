"""Co-safe LTL: syntax tree, parser, negation normal form, progression, semantics.

Formulas are immutable trees built from the node classes below.  Truth
assignments are frozensets holding the propositions that are true; every
proposition absent from the set is false.
"""

from __future__ import annotations

import functools
import itertools
import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

Assignment = frozenset  # frozenset[str] of true propositions
Trace = Sequence[frozenset]

MAX_VOCAB = 16


class LtlError(ValueError):
    pass


class LtlSyntaxError(LtlError):
    def __init__(self, position: int, expected: str, text: str = ""):
        self.position = position
        self.expected = expected
        super().__init__(f"expected {expected} at position {position}" + (f" in {text!r}" if text else ""))


class UnknownProposition(LtlError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unknown proposition {name!r}")


class NotCoSafe(LtlError):
    pass


class EmptyTrace(LtlError):
    pass


class TemporalOperatorPresent(LtlError):
    pass


class VocabularyTooLarge(LtlError):
    pass


class Formula:
    __slots__ = ()

    def __str__(self) -> str:
        return to_text(self)

    def __getstate__(self):
        # the cached hash is salted per process, so it never travels
        return {k: v for k, v in self.__dict__.items() if k != "_hash"}


def _node(cls):
    """Frozen dataclass whose (recursive) hash is computed once per instance."""
    cls = dataclass(frozen=True, repr=cls.__dict__.get("__repr__") is None)(cls)
    structural = cls.__hash__

    def __hash__(self):
        try:
            return self.__dict__["_hash"]
        except KeyError:
            h = structural(self)
            object.__setattr__(self, "_hash", h)
            return h

    cls.__hash__ = __hash__
    return cls


@_node
class Top(Formula):
    def __repr__(self):
        return "TRUE"


@_node
class Bottom(Formula):
    def __repr__(self):
        return "FALSE"


TRUE = Top()
FALSE = Bottom()


@_node
class Atom(Formula):
    name: str


@_node
class NegAtom(Formula):
    name: str


@_node
class Not(Formula):
    """Negation of an arbitrary subformula; only produced by the parser."""
    child: Formula


@_node
class And(Formula):
    children: tuple[Formula, ...]

    def __init__(self, *children):
        if len(children) == 1 and isinstance(children[0], (tuple, list)):
            children = tuple(children[0])
        object.__setattr__(self, "children", tuple(children))


@_node
class Or(Formula):
    children: tuple[Formula, ...]

    def __init__(self, *children):
        if len(children) == 1 and isinstance(children[0], (tuple, list)):
            children = tuple(children[0])
        object.__setattr__(self, "children", tuple(children))


@_node
class Next(Formula):
    child: Formula


@_node
class Until(Formula):
    left: Formula
    right: Formula


@_node
class Eventually(Formula):
    child: Formula


@_node
class Globally(Formula):
    child: Formula


_PROPOSITIONAL = (Top, Bottom, Atom, NegAtom, Not, And, Or)


# --- printing ---------------------------------------------------------------

@functools.lru_cache(maxsize=1 << 16)
def to_text(f: Formula) -> str:
    """Fully parenthesised concrete syntax; ``parse(to_text(f))`` rebuilds ``f``."""
    match f:
        case Top():
            return "true"
        case Bottom():
            return "false"
        case Atom(name):
            return name
        case NegAtom(name):
            return "!" + name
        case Not(child):
            return f"!({to_text(child)})"
        case And(children):
            return "(" + " & ".join(to_text(c) for c in children) + ")" if children else "true"
        case Or(children):
            return "(" + " | ".join(to_text(c) for c in children) + ")" if children else "false"
        case Next(child):
            return "X " + to_text(child)
        case Eventually(child):
            return "F " + to_text(child)
        case Globally(child):
            return "G " + to_text(child)
        case Until(left, right):
            return f"({to_text(left)} U {to_text(right)})"
    raise TypeError(f"not a formula: {f!r}")


def atoms(f: Formula) -> frozenset[str]:
    """Proposition names mentioned by ``f``."""
    match f:
        case Atom(name) | NegAtom(name):
            return frozenset([name])
        case Not(child) | Next(child) | Eventually(child) | Globally(child):
            return atoms(child)
        case And(children) | Or(children):
            return frozenset().union(*(atoms(c) for c in children))
        case Until(left, right):
            return atoms(left) | atoms(right)
    return frozenset()


# --- parsing ----------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<atom>[a-z][a-z0-9_]*)|(?P<op>[!&|()XUFG]))")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            raise LtlSyntaxError(pos, "an atom, literal or operator", text)
        start = m.start(m.lastgroup)
        value = m.group(m.lastgroup)
        kind = m.lastgroup
        if kind == "atom" and value in ("true", "false"):
            kind = "lit"
        tokens.append((kind, value, start))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, vocab):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.vocab = None if vocab is None else frozenset(vocab)

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.peek()
        if val != value or kind == "eof":
            raise LtlSyntaxError(pos, repr(value), self.text)
        self.take()

    def parse(self) -> Formula:
        f = self.disjunction()
        kind, _, pos = self.peek()
        if kind != "eof":
            raise LtlSyntaxError(pos, "end of input", self.text)
        return f

    def disjunction(self):
        f = self.conjunction()
        while self.peek()[1] == "|" and self.peek()[0] == "op":
            self.take()
            f = Or(f, self.conjunction())
        return f

    def conjunction(self):
        f = self.until()
        while self.peek()[1] == "&" and self.peek()[0] == "op":
            self.take()
            f = And(f, self.until())
        return f

    def until(self):
        left = self.unary()
        if self.peek()[1] == "U" and self.peek()[0] == "op":
            self.take()
            return Until(left, self.until())
        return left

    def unary(self):
        kind, val, pos = self.peek()
        if kind == "op" and val in "!XFG":
            self.take()
            child = self.unary()
            if val == "!":
                return NegAtom(child.name) if isinstance(child, Atom) else Not(child)
            return {"X": Next, "F": Eventually, "G": Globally}[val](child)
        return self.primary()

    def primary(self):
        kind, val, pos = self.take()
        if kind == "atom":
            if self.vocab is not None and val not in self.vocab:
                raise UnknownProposition(val)
            return Atom(val)
        if kind == "lit":
            return TRUE if val == "true" else FALSE
        if kind == "op" and val == "(":
            f = self.disjunction()
            self.expect(")")
            return f
        raise LtlSyntaxError(pos, "an atom, literal, unary operator or '('", self.text)


def parse(text: str, vocab: Iterable[str] | None = None) -> Formula:
    """Parse concrete syntax into a tree (negations not yet pushed to atoms).

    Binary ``&`` and ``|`` associate to the left, ``U`` to the right.
    When ``vocab`` is given, atoms outside it raise ``UnknownProposition``.
    """
    return _Parser(text, vocab).parse()


# --- normal forms -----------------------------------------------------------

def to_nnf(f: Formula) -> Formula:
    """Push negations down to atoms.

    Raises ``NotCoSafe`` when a negated until would need a release operator.
    """
    match f:
        case Not(child):
            return _negate(child)
        case And(children):
            return And(tuple(to_nnf(c) for c in children))
        case Or(children):
            return Or(tuple(to_nnf(c) for c in children))
        case Next(child):
            return Next(to_nnf(child))
        case Eventually(child):
            return Eventually(to_nnf(child))
        case Globally(child):
            return Globally(to_nnf(child))
        case Until(left, right):
            return Until(to_nnf(left), to_nnf(right))
    return f


def _negate(f: Formula) -> Formula:
    match f:
        case Top():
            return FALSE
        case Bottom():
            return TRUE
        case Atom(name):
            return NegAtom(name)
        case NegAtom(name):
            return Atom(name)
        case Not(child):
            return to_nnf(child)
        case And(children):
            return Or(tuple(_negate(c) for c in children))
        case Or(children):
            return And(tuple(_negate(c) for c in children))
        case Next(child):
            return Next(_negate(child))
        case Eventually(child):
            return Globally(_negate(child))
        case Globally(child):
            return Eventually(_negate(child))
        case Until():
            raise NotCoSafe(f"negated until {to_text(f)} needs a release operator")
    raise TypeError(f"not a formula: {f!r}")


def is_nnf(f: Formula) -> bool:
    match f:
        case Not():
            return False
        case And(children) | Or(children):
            return all(is_nnf(c) for c in children)
        case Next(child) | Eventually(child) | Globally(child):
            return is_nnf(child)
        case Until(left, right):
            return is_nnf(left) and is_nnf(right)
    return True


@functools.lru_cache(maxsize=1 << 18)
def simplify(f: Formula) -> Formula:
    """Canonical form used as reward-machine state identity.

    Bottom-up: True/False identities and absorption in And/Or, flattening,
    duplicate removal, children sorted by their printed text, ``F F p -> F p``
    and ``G G p -> G p``.  A junction also drops children made redundant by a
    sibling under ``_implies``, so ``F b | F (a & F b)`` becomes ``F b``.
    """
    match f:
        case And(children):
            return _simplify_junction(And, children, unit=TRUE, zero=FALSE)
        case Or(children):
            return _simplify_junction(Or, children, unit=FALSE, zero=TRUE)
        case Next(child):
            return Next(simplify(child))
        case Eventually(child):
            child = simplify(child)
            return child if isinstance(child, Eventually) else Eventually(child)
        case Globally(child):
            child = simplify(child)
            return child if isinstance(child, Globally) else Globally(child)
        case Until(left, right):
            return Until(simplify(left), simplify(right))
        case Not(child):
            return Not(simplify(child))
    return f


def _simplify_junction(kind, children, unit, zero):
    flat = {}
    for c in children:
        c = simplify(c)
        if c == zero:
            return zero
        if c == unit:
            continue
        for g in (c.children if isinstance(c, kind) else (c,)):
            flat[to_text(g)] = g
    if not flat:
        return unit
    kept = [flat[k] for k in sorted(flat)]
    for g in list(kept):
        for h in kept:
            if h is g:
                continue
            # Or drops a disjunct implying a sibling; And drops a conjunct implied by one
            if (_implies(g, h) if kind is Or else _implies(h, g)):
                kept.remove(g)
                break
    if len(kept) == 1:
        return kept[0]
    return kind(tuple(kept))


@functools.lru_cache(maxsize=1 << 16)
def _implies(x: Formula, y: Formula) -> bool:
    """Sound, incomplete check that every trace accepting ``x`` accepts ``y``."""
    if x == y or y == TRUE or x == FALSE:
        return True
    if isinstance(y, And):
        return all(_implies(x, c) for c in y.children)
    if isinstance(x, Or):
        return all(_implies(c, y) for c in x.children)
    if isinstance(x, And) and any(_implies(c, y) for c in x.children):
        return True
    if isinstance(y, Or) and any(_implies(x, c) for c in y.children):
        return True
    match x, y:
        case Eventually(a), Eventually(b):
            if _implies(a, y):
                return True
        case Next(a), Next(b):
            return _implies(a, b)
        case Next(a), Eventually():
            return _implies(a, y)
        case Until(l1, r1), Until(l2, r2):
            if _implies(l1, l2) and _implies(r1, r2):
                return True
        case Until(_, r), Eventually():
            return _implies(r, y)
    if isinstance(y, Eventually):
        return _implies(x, y.child)
    return False


# --- progression and semantics ----------------------------------------------

@functools.lru_cache(maxsize=1 << 18)
def progress(f: Formula, sigma: Assignment) -> Formula:
    """Residual obligation of ``f`` after observing ``sigma`` for one step.

    The result is put in absorbed disjunctive form over its temporal and
    literal parts.  Those parts are always subformulas of the original, so
    repeated progression reaches only finitely many distinct formulas.
    """
    return _disjunctive(simplify(_progress(f, sigma)))


_MAX_CLAUSES = 512


def _clauses(f: Formula) -> list[frozenset] | None:
    if isinstance(f, Or):
        out = []
        for c in f.children:
            sub = _clauses(c)
            if sub is None:
                return None
            out.extend(sub)
        return out
    if isinstance(f, And):
        out = [frozenset()]
        for c in f.children:
            sub = _clauses(c)
            if sub is None or len(out) * len(sub) > _MAX_CLAUSES:
                return None
            out = [x | y for x in out for y in sub]
        return out
    return [frozenset({f})]


def _disjunctive(f: Formula) -> Formula:
    if not isinstance(f, (And, Or)):
        return f
    clauses = _clauses(f)
    if clauses is None:
        return f
    live = []
    for c in set(clauses):
        pos = {g.name for g in c if isinstance(g, Atom)}
        if not any(isinstance(g, NegAtom) and g.name in pos for g in c):
            live.append(c)
    # a clause that contains another is absorbed by it
    kept = [c for c in live if not any(d < c for d in live)]
    return simplify(Or(tuple(And(tuple(c)) for c in kept)))


def _progress(f: Formula, sigma) -> Formula:
    match f:
        case Top() | Bottom():
            return f
        case Atom(name):
            return TRUE if name in sigma else FALSE
        case NegAtom(name):
            return FALSE if name in sigma else TRUE
        case And(children):
            return And(tuple(_progress(c, sigma) for c in children))
        case Or(children):
            return Or(tuple(_progress(c, sigma) for c in children))
        case Next(child):
            return child
        case Until(left, right):
            return Or(_progress(right, sigma), And(_progress(left, sigma), f))
        case Eventually(child):
            return Or(_progress(child, sigma), f)
        case Globally(child):
            return And(_progress(child, sigma), f)
        case Not():
            raise LtlError("progression needs a formula in negation normal form")
    raise TypeError(f"not a formula: {f!r}")


def holds_on_trace(f: Formula, trace: Trace) -> bool:
    """Co-safe finite-trace acceptance by iterated progression.

    True iff progression reaches ``true`` at or before the last step; a
    formula still unresolved at the end of the trace counts as unsatisfied.
    """
    if len(trace) == 0:
        raise EmptyTrace("satisfaction needs a non-empty trace")
    state = simplify(f)
    for sigma in trace:
        if state == TRUE:
            return True
        if state == FALSE:
            return False
        state = progress(state, frozenset(sigma))
    return state == TRUE


def holds_recursive(f: Formula, trace: Trace) -> bool:
    """Same acceptance relation as ``holds_on_trace``, by direct recursion over trace positions.

    This never progresses formulas, so it serves as an independent oracle.
    """
    if len(trace) == 0:
        raise EmptyTrace("satisfaction needs a non-empty trace")
    if not is_nnf(f):
        raise LtlError("semantics defined for negation normal form only")
    trace = [frozenset(s) for s in trace]
    n = len(trace)
    memo: dict[tuple[int, int], bool] = {}

    def at_end(g):
        match g:
            case Top():
                return True
            case And(children):
                return all(at_end(c) for c in children)
            case Or(children):
                return any(at_end(c) for c in children)
        return False

    def good(g, i):
        if i == n:
            return at_end(g)
        key = (id(g), i)
        if key in memo:
            return memo[key]
        match g:
            case Top():
                r = True
            case Bottom():
                r = False
            case Atom(name):
                r = name in trace[i]
            case NegAtom(name):
                r = name not in trace[i]
            case And(children):
                r = all(good(c, i) for c in children)
            case Or(children):
                r = any(good(c, i) for c in children)
            case Next(child):
                r = good(child, i + 1)
            case Eventually(child):
                r = any(good(child, j) for j in range(i, n))
            case Globally():
                # no finite prefix discharges an unconditional invariant
                r = False
            case Until(left, right):
                r = False
                for j in range(i, n):
                    if good(right, j):
                        r = True
                        break
                    if not good(left, j):
                        break
        memo[key] = r
        return r

    return good(f, 0)


# --- propositional satisfiability ------------------------------------------

def all_assignments(vocab: Iterable[str]) -> Iterator[Assignment]:
    """Every assignment over ``vocab`` in a fixed binary-counting order."""
    names = sorted(set(vocab))
    if len(names) > MAX_VOCAB:
        raise VocabularyTooLarge(f"{len(names)} propositions exceed the cap of {MAX_VOCAB}")
    for bits in itertools.product((False, True), repeat=len(names)):
        yield frozenset(n for n, b in zip(names, bits) if b)


def evaluate(g: Formula, sigma: Assignment) -> bool:
    match g:
        case Top():
            return True
        case Bottom():
            return False
        case Atom(name):
            return name in sigma
        case NegAtom(name):
            return name not in sigma
        case Not(child):
            return not evaluate(child, sigma)
        case And(children):
            return all(evaluate(c, sigma) for c in children)
        case Or(children):
            return any(evaluate(c, sigma) for c in children)
    raise TemporalOperatorPresent(f"{to_text(g)} is not propositional")


def _check_propositional(g: Formula) -> None:
    if not isinstance(g, _PROPOSITIONAL):
        raise TemporalOperatorPresent(f"{to_text(g)} is not propositional")
    match g:
        case Not(child):
            _check_propositional(child)
        case And(children) | Or(children):
            for c in children:
                _check_propositional(c)


def satisfying_assignments(g: Formula, vocab: Iterable[str] | None = None) -> frozenset:
    """Exact model set of a propositional formula over ``vocab`` (default: its atoms)."""
    _check_propositional(g)
    vocab = atoms(g) if vocab is None else frozenset(vocab) | atoms(g)
    return frozenset(s for s in all_assignments(vocab) if evaluate(g, s))


def satisfiable(g: Formula, vocab: Iterable[str] | None = None) -> bool:
    """Truth-table satisfiability over at most ``MAX_VOCAB`` propositions."""
    _check_propositional(g)
    vocab = atoms(g) if vocab is None else frozenset(vocab) | atoms(g)
    return any(evaluate(g, s) for s in all_assignments(vocab))
