"""Recompile state-centric options into portable transition-centric options.

Each state-centric option is rolled out from every cell of the map.  The
rollout stops when the label leaves the option's self guard; the label it
stops on is classified against the out-edges of the training reward
machine, which yields ``f(s)`` for every (self edge, out edge) pair.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import ltl
from .gridworld import GridMap, Position, label, step, transition_table
from .learner import StateCentricOption
from .ltl import Formula
from .reward_machine import EdgeGuard, build_rm

BANK_VERSION = "ltl-transfer-option-bank/1"
ACTION_CHARS = "NSEW"


class BankError(ValueError):
    pass


class VersionMismatch(BankError):
    pass


class MapMismatch(BankError):
    pass


class CorruptBank(BankError):
    pass


def default_step_cap(grid: GridMap) -> int:
    return 4 * (grid.width + grid.height)


@dataclass(frozen=True, eq=False)
class TransitionCentricOption:
    """Keeps ``self_guard`` true until ``target_guard`` holds; ``f[cell]`` is the completion rate."""

    self_guard: EdgeGuard
    target_guard: EdgeGuard
    owner: Formula  # policy owner: the training RM state
    formula: Formula  # training task the option came from
    target: Formula  # RM state the target edge leads to
    f: np.ndarray = field(repr=False)
    policy: tuple[int, ...] = field(repr=False)

    @cached_property
    def id(self) -> tuple[str, str, str]:
        return (ltl.to_text(self.formula), ltl.to_text(self.owner), ltl.to_text(self.target))

    @property
    def provenance(self) -> tuple[Formula, Formula]:
        return (self.formula, self.owner)

    def completion(self, grid: GridMap, s: Position) -> float:
        return float(self.f[grid.cell_index(s)])

    def action(self, grid: GridMap, s: Position) -> int:
        return self.policy[grid.cell_index(s)]

    def __eq__(self, other):
        if not isinstance(other, TransitionCentricOption):
            return NotImplemented
        return (
            self.id == other.id
            and self.self_guard == other.self_guard
            and self.target_guard == other.target_guard
            and self.policy == other.policy
            and np.array_equal(self.f, other.f)
        )

    def __hash__(self):
        return hash(self.id)


@dataclass(frozen=True)
class OptionBank:
    options: tuple[TransitionCentricOption, ...]
    map_digest: str
    n_rollouts: int
    step_cap: int
    manifest: tuple[Formula, ...]
    policies: dict = field(compare=False, repr=False)  # owner -> greedy action per cell
    width: int = 0

    def __len__(self):
        return len(self.options)

    def __iter__(self):
        return iter(self.options)


def _rollout_ends(trans: np.ndarray, policy: np.ndarray, inside: np.ndarray, step_cap: int) -> np.ndarray:
    """Cell where the greedy rollout from every start cell leaves ``inside``.

    -1 marks a timeout, -2 a start cell already outside (option not applicable).
    """
    n = len(policy)
    pos = np.arange(n)
    end = np.full(n, -1)
    end[~inside] = -2
    active = inside.copy()
    for _ in range(step_cap):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        nxt = trans[pos[idx], policy[pos[idx]]]
        pos[idx] = nxt
        done = ~inside[nxt]
        end[idx[done]] = nxt[done]
        active[idx[done]] = False
    return end


def _rollout_job(args):
    trans, policy, inside, step_cap, n_rollouts = args
    ends = [_rollout_ends(trans, policy, inside, step_cap) for _ in range(n_rollouts)]
    return np.stack(ends)


def _cell_labels(grid: GridMap) -> list[frozenset]:
    return [label(grid, p) for p in grid.positions]


def estimate_edge_distribution(
    grid: GridMap, option: StateCentricOption, s: Position, n_rollouts: int = 1, step_cap: int | None = None
) -> dict[EdgeGuard, float]:
    """Frequency of each out-edge of the option's RM state when started from ``s``.

    Frequencies sum to at most one; the deficit is timeout mass.  A start
    cell outside the self guard gives an empty mapping.
    """
    step_cap = default_step_cap(grid) if step_cap is None else step_cap
    rm = build_rm(option.formula)
    counts: dict[EdgeGuard, int] = {}
    for _ in range(n_rollouts):
        cur = s
        if not option.self_guard.holds(label(grid, cur)):
            return {}
        for _ in range(step_cap):
            cur = step(grid, cur, option.action(grid, cur))
            sigma = label(grid, cur)
            if not option.self_guard.holds(sigma):
                for dst, guard in rm.out_edges(option.state):
                    if guard.holds(sigma):
                        counts[guard] = counts.get(guard, 0) + 1
                        break
                break
    return {g: c / n_rollouts for g, c in counts.items()}


def compile(
    grid: GridMap,
    train_set: Sequence[Formula],
    state_options: Iterable[StateCentricOption],
    n_rollouts: int = 1,
    step_cap: int | None = None,
    workers: int = 1,
) -> OptionBank:
    """Transition-centric options for every (state option, out-edge) pair.

    Rollouts depend only on the policy owner and its self guard, so they are
    shared by every training formula that passes through the same state.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be at least 1")
    step_cap = default_step_cap(grid) if step_cap is None else step_cap
    if step_cap < 1:
        raise ValueError("step_cap must be at least 1")
    state_options = list(state_options)
    manifest = tuple(ltl.simplify(ltl.to_nnf(f)) for f in train_set)
    trans = np.array(transition_table(grid), dtype=np.int64)
    labels = _cell_labels(grid)

    jobs = {}
    for o in state_options:
        key = (o.state, o.self_guard.reduced())
        if key not in jobs:
            inside = np.array([o.self_guard.holds(l) for l in labels])
            jobs[key] = (trans, np.array(o.policy, dtype=np.int64), inside, step_cap, n_rollouts)
    keys = list(jobs)
    workers = _worker_count(workers)
    if workers > 1 and len(keys) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_rollout_job, [jobs[k] for k in keys], chunksize=max(1, len(keys) // (4 * workers))))
    else:
        results = [_rollout_job(jobs[k]) for k in keys]
    ends = dict(zip(keys, results))

    options = []
    policies = {}
    for o in state_options:
        rm = build_rm(o.formula)
        runs = ends[o.state, o.self_guard.reduced()]
        policies[o.state] = tuple(o.policy)
        for dst, guard in rm.out_edges(o.state):
            hits = np.zeros(grid.n_cells)
            for row in runs:
                ok = row >= 0
                hit = np.zeros(grid.n_cells, dtype=bool)
                hit[ok] = [guard.holds(labels[c]) for c in row[ok]]
                hits += hit
            options.append(
                TransitionCentricOption(o.self_guard, guard, o.state, o.formula, dst, hits / n_rollouts, tuple(o.policy))
            )
    return OptionBank(tuple(options), grid.digest, n_rollouts, step_cap, manifest, policies, grid.width)


def _worker_count(workers: int | None) -> int:
    env = os.environ.get("LTL_TRANSFER_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, workers or 1)


def save_bank(bank: OptionBank, path: str | Path) -> None:
    width = bank.width
    doc = {
        "version": BANK_VERSION,
        "map": bank.map_digest,
        "n_rollouts": bank.n_rollouts,
        "step_cap": bank.step_cap,
        "width": width,
        "n_cells": len(next(iter(bank.policies.values()), ())),
        "manifest": [ltl.to_text(f) for f in bank.manifest],
        "policies": {ltl.to_text(q): "".join(ACTION_CHARS[a] for a in p) for q, p in bank.policies.items()},
        "options": [
            {
                "e1": o.self_guard.display,
                "e2": o.target_guard.display,
                "vocab": sorted(o.self_guard.vocab | o.target_guard.vocab),
                "provenance": [ltl.to_text(o.formula), ltl.to_text(o.owner)],
                "target": ltl.to_text(o.target),
                "policy": ltl.to_text(o.owner),
                "f": [[*divmod(int(c), width), float(o.f[c])] for c in np.flatnonzero(o.f)],
            }
            for o in bank.options
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_bank(path: str | Path, grid: GridMap | None = None) -> OptionBank:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CorruptBank(f"not a JSON document: {e}") from None
    if not isinstance(doc, dict) or doc.get("version") != BANK_VERSION:
        raise VersionMismatch(f"unsupported option bank version {doc.get('version') if isinstance(doc, dict) else None!r}")
    if grid is not None and doc.get("map") != grid.digest:
        raise MapMismatch("option bank was compiled on a different map")
    try:
        return _decode(doc)
    except (KeyError, TypeError, ValueError, IndexError, ltl.LtlError) as e:
        if isinstance(e, BankError):
            raise
        raise CorruptBank(str(e)) from None


def _formula(text: str) -> Formula:
    return ltl.simplify(ltl.to_nnf(ltl.parse(text)))


def _decode(doc: dict) -> OptionBank:
    width = int(doc["width"])
    n_cells = int(doc["n_cells"])
    manifest = tuple(_formula(t) for t in doc["manifest"])
    members = set(manifest)
    policies = {}
    for text, acts in doc["policies"].items():
        if len(acts) != n_cells:
            raise CorruptBank(f"policy for {text} has {len(acts)} cells, expected {n_cells}")
        policies[_formula(text)] = tuple(ACTION_CHARS.index(a) for a in acts)
    options = []
    for rec in doc["options"]:
        vocab = rec["vocab"]
        e1 = EdgeGuard.from_text(rec["e1"], vocab)
        e2 = EdgeGuard.from_text(rec["e2"], vocab)
        if e1.models & e2.models:
            raise CorruptBank(f"self and target guards overlap: {rec['e1']} / {rec['e2']}")
        phi, owner = (_formula(t) for t in rec["provenance"])
        if phi not in members:
            raise CorruptBank(f"option provenance {rec['provenance'][0]} is not in the manifest")
        if _formula(rec["policy"]) not in policies:
            raise CorruptBank(f"missing policy {rec['policy']}")
        f = np.zeros(n_cells)
        for r, c, p in rec["f"]:
            if not 0.0 <= p <= 1.0:
                raise CorruptBank(f"completion probability {p} outside [0, 1]")
            f[r * width + c] = p
        options.append(TransitionCentricOption(e1, e2, owner, phi, _formula(rec["target"]), f, policies[_formula(rec["policy"])]))
    return OptionBank(tuple(options), doc["map"], int(doc["n_rollouts"]), int(doc["step_cap"]), manifest, policies, width)
