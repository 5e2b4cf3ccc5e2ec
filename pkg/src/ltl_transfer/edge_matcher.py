"""Constrained and Relaxed edge matching between options and test-RM edges.

Guards are compared as sets of truth assignments.  By default the
assignments range over every valuation of the union vocabulary; a
``domain`` narrows them to the labels an environment can actually emit.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import ltl
from .reward_machine import EdgeGuard


class MatchCriterion(enum.Enum):
    CONSTRAINED = "constrained"
    RELAXED = "relaxed"

    @classmethod
    def parse(cls, text: str) -> "MatchCriterion":
        try:
            return cls(text.lower())
        except ValueError:
            raise ValueError(f"unknown criterion {text!r}; expected constrained or relaxed") from None


@dataclass(frozen=True)
class MatchQuery:
    e1: EdgeGuard  # option self guard
    e2: EdgeGuard  # option target guard
    e_self: EdgeGuard  # test self guard
    e_target: EdgeGuard  # test target guard
    failure: frozenset = frozenset()  # guards into failure-equivalent test states
    domain: frozenset | None = None  # assignments considered; None = all of 2^vocab

    @property
    def vocab(self) -> frozenset:
        v = self.e1.vocab | self.e2.vocab | self.e_self.vocab | self.e_target.vocab
        for g in self.failure:
            v |= g.vocab
        return v

    def universe(self) -> list[frozenset]:
        if self.domain is not None:
            return sorted(self.domain, key=sorted)
        return list(ltl.all_assignments(self.vocab))


def _mask(guard: EdgeGuard, universe: list[frozenset]) -> int:
    bits = 0
    for i, sigma in enumerate(universe):
        if guard.holds(sigma):
            bits |= 1 << i
    return bits


def _constrained(e1: int, e2: int, e_self: int, e_target: int) -> bool:
    return not (e1 & ~e_self) and not (e2 & ~e_target)


def _relaxed(e1: int, e2: int, e_self: int, e_target: int, failure: Iterable[int]) -> bool:
    if not (e1 & e_self) or not (e2 & e_target):
        return False
    if any((e1 & bad) or (e2 & bad) for bad in failure):
        return False
    return not (e2 & e_self)


def match_constrained(q: MatchQuery) -> bool:
    """Option guards imply the test guards: no e1 model leaves e_self, no e2 model leaves e_target."""
    u = q.universe()
    return _constrained(_mask(q.e1, u), _mask(q.e2, u), _mask(q.e_self, u), _mask(q.e_target, u))


def match_relaxed(q: MatchQuery) -> bool:
    u = q.universe()
    return _relaxed(
        _mask(q.e1, u), _mask(q.e2, u), _mask(q.e_self, u), _mask(q.e_target, u), [_mask(g, u) for g in q.failure]
    )


def matches(q: MatchQuery, criterion: MatchCriterion) -> bool:
    return match_relaxed(q) if criterion is MatchCriterion.RELAXED else match_constrained(q)


class Matcher:
    """Memoised matching over a fixed assignment domain.

    Guards become bitmasks over the domain once.  ``match_all`` checks one
    test edge against a whole array of option guards at a time, and its
    verdicts are cached by the test edge's masks, which recur across tasks.
    """

    def __init__(self, domain: Iterable[frozenset]):
        self.universe = sorted(set(domain), key=sorted)
        if len(self.universe) > 64:
            raise ValueError("matcher domains are limited to 64 assignments")
        self._masks: dict[EdgeGuard, int] = {}
        self._memo: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()

    def mask(self, guard: EdgeGuard) -> int:
        m = self._masks.get(guard)
        if m is None:
            m = _mask(guard, self.universe)
            with self._lock:
                self._masks.setdefault(guard, m)
        return m

    def masks(self, guards: Iterable[EdgeGuard]) -> np.ndarray:
        return np.array([self.mask(g) for g in guards], dtype=np.uint64)

    def match(
        self,
        criterion: MatchCriterion,
        e1: EdgeGuard,
        e2: EdgeGuard,
        e_self: EdgeGuard,
        e_target: EdgeGuard,
        failure: frozenset = frozenset(),
    ) -> bool:
        m1, m2, ms, mt = self.mask(e1), self.mask(e2), self.mask(e_self), self.mask(e_target)
        if criterion is MatchCriterion.RELAXED:
            return _relaxed(m1, m2, ms, mt, [self.mask(g) for g in failure])
        return _constrained(m1, m2, ms, mt)

    def match_all(
        self,
        criterion: MatchCriterion,
        m1: np.ndarray,
        m2: np.ndarray,
        e_self: EdgeGuard,
        e_target: EdgeGuard,
        failure: Iterable[EdgeGuard] = (),
        tag=None,
    ) -> np.ndarray:
        """Boolean verdict per option for one test edge; ``tag`` names the option arrays in the memo."""
        ms, mt = self.mask(e_self), self.mask(e_target)
        bad = 0
        for g in failure:
            bad |= self.mask(g)
        key = (tag, criterion, ms, mt, bad)
        hit = self._memo.get(key) if tag is not None else None
        if hit is not None:
            return hit
        ms, mt, bad = np.uint64(ms), np.uint64(mt), np.uint64(bad)
        zero = np.uint64(0)
        if criterion is MatchCriterion.RELAXED:
            verdict = (
                ((m1 & ms) != zero)
                & ((m2 & mt) != zero)
                & ((m1 & bad) == zero)
                & ((m2 & bad) == zero)
                & ((m2 & ms) == zero)
            )
        else:
            verdict = ((m1 & ~ms) == zero) & ((m2 & ~mt) == zero)
        if tag is not None:
            with self._lock:
                self._memo.setdefault(key, verdict)
        return verdict

    def __len__(self):
        return len(self._memo)
