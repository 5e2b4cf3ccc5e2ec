"""Multi-task tabular Q-learning over progressed formulas (LPOPL style).

Every distinct formula reachable by progression from a training task owns a
Q-table.  Each environment transition updates all of them off-policy, so a
subtask shared by several training formulas is learned once.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ltl
from .gridworld import ACTIONS, GridMap, Position, label, transition_table
from .ltl import FALSE, TRUE, Formula
from .reward_machine import EdgeGuard, build_rm

log = logging.getLogger(__name__)

BANK_VERSION = "ltl-transfer-policy-bank/1"


class MissingSubpolicy(KeyError):
    pass


class BankFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    alpha: float = 0.5
    gamma: float = 0.9
    epsilon: float = 0.1
    episodes: int | None = None  # None: 200 episodes per map cell
    max_steps: int = 500
    seed: int = 0
    random_restart: bool = True

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.max_steps <= 0 or (self.episodes is not None and self.episodes < 0):
            raise ValueError("episode counts must be positive")

    def episodes_for(self, grid: GridMap) -> int:
        return 200 * grid.n_cells if self.episodes is None else self.episodes


@dataclass
class PolicyBank:
    """Q-tables indexed by owner formula; ``q[i, cell, action]``."""

    owners: tuple[Formula, ...]
    q: np.ndarray
    map_digest: str = ""
    width: int = 0
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {f: i for i, f in enumerate(self.owners)}

    def __len__(self):
        return len(self.owners)

    def __contains__(self, f) -> bool:
        return f in self.index

    def qtable(self, f: Formula) -> np.ndarray:
        try:
            return self.q[self.index[f]]
        except KeyError:
            raise MissingSubpolicy(ltl.to_text(f)) from None

    def greedy_policy(self, f: Formula) -> tuple[int, ...]:
        """Greedy action per cell; ties go to the first action in N, S, E, W order."""
        return tuple(int(a) for a in self.qtable(f).argmax(axis=1))

    def same_as(self, other: "PolicyBank") -> bool:
        return self.owners == other.owners and np.array_equal(self.q, other.q)


def progression_closure(train_set: Sequence[Formula]) -> list[Formula]:
    """Non-terminal reward-machine states of every training formula, first-seen order."""
    owners: dict[Formula, None] = {}
    for f in train_set:
        for q in build_rm(ltl.simplify(ltl.to_nnf(f))).states:
            if q != TRUE and q != FALSE:
                owners.setdefault(q)
    return list(owners)


def train(grid: GridMap, train_set: Sequence[Formula], h: Hyperparams = Hyperparams()) -> PolicyBank:
    tasks = [ltl.simplify(ltl.to_nnf(f)) for f in train_set]
    owners = progression_closure(tasks)
    n = len(owners)
    n_cells = grid.n_cells
    if n == 0:
        return PolicyBank((), np.zeros((0, n_cells, len(ACTIONS))), grid.digest, grid.width)
    index = {f: i for i, f in enumerate(owners)}

    labels = sorted(grid.label_image, key=sorted)
    label_ids = {l: j for j, l in enumerate(labels)}
    cell_label = np.array([label_ids[label(grid, p)] for p in grid.positions])

    # row n is the absorbing terminal, its Q-values stay 0
    nxt = np.full((len(labels), n), n, dtype=np.int64)
    rew = np.zeros((len(labels), n))
    for i, f in enumerate(owners):
        for j, sigma in enumerate(labels):
            g = ltl.progress(f, sigma)
            if g == TRUE:
                rew[j, i] = 1.0
            elif g != FALSE:
                nxt[j, i] = index[g]

    q = np.zeros((n + 1, n_cells, len(ACTIONS)))
    trans = np.array(transition_table(grid), dtype=np.int64)
    rng = np.random.default_rng(h.seed)
    alpha, gamma = h.alpha, h.gamma
    start_cell = grid.cell_index(grid.start)
    runnable = [index[f] for f in tasks if f in index]
    episodes = h.episodes_for(grid) if runnable else 0

    for ep in range(episodes):
        cur = runnable[ep % len(runnable)]
        s = int(rng.integers(n_cells)) if h.random_restart else start_cell
        explore = rng.random(h.max_steps) < h.epsilon
        random_actions = rng.integers(len(ACTIONS), size=h.max_steps)
        for t in range(h.max_steps):
            if explore[t]:
                a = int(random_actions[t])
            else:
                row = q[cur, s]
                best = np.flatnonzero(row == row.max())
                a = int(best[0]) if len(best) == 1 else int(rng.choice(best))
            s2 = int(trans[s, a])
            l = cell_label[s2]
            col = nxt[l]
            target = rew[l] + gamma * q[col, s2].max(axis=1)
            q[:n, s, a] += alpha * (target - q[:n, s, a])
            cur = int(col[cur])
            if cur == n:
                break
            s = s2
    log.debug("trained %d subtasks for %d episodes", n, episodes)
    return PolicyBank(tuple(owners), q[:n].copy(), grid.digest, grid.width)


@dataclass(frozen=True)
class StateCentricOption:
    """Subpolicy of one training-task state, terminating once its self-edge guard fails."""

    formula: Formula  # training task
    state: Formula  # reward-machine state, also the policy owner
    self_guard: EdgeGuard
    policy: tuple[int, ...] = field(repr=False)

    def terminates(self, assignment) -> bool:
        return not self.self_guard.holds(assignment)

    def action(self, grid: GridMap, s: Position) -> int:
        return self.policy[grid.cell_index(s)]


def extract_state_centric_options(bank: PolicyBank, train_set: Sequence[Formula]) -> list[StateCentricOption]:
    options = []
    seen = set()
    for f in train_set:
        f = ltl.simplify(ltl.to_nnf(f))
        rm = build_rm(f)
        for q in rm.states:
            if q == TRUE or q == FALSE or (f, q) in seen:
                continue
            seen.add((f, q))
            options.append(StateCentricOption(f, q, rm.self_edge(q), bank.greedy_policy(q)))
    return options


def save_policy_bank(bank: PolicyBank, path: str | Path) -> None:
    owners = {}
    for i, f in enumerate(bank.owners):
        rows = []
        for cell, a in zip(*np.nonzero(bank.q[i])):
            r, c = divmod(int(cell), bank.width)
            rows.append([r, c, int(a), float(bank.q[i, cell, a])])
        owners[ltl.to_text(f)] = rows
    doc = {"version": BANK_VERSION, "map": bank.map_digest, "shape": list(bank.q.shape[1:]), "width": bank.width, "owners": owners}
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_policy_bank(path: str | Path, grid: GridMap | None = None) -> PolicyBank:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != BANK_VERSION:
        raise BankFormatError(f"unsupported policy bank version {doc.get('version')!r}")
    if grid is not None and doc["map"] != grid.digest:
        raise BankFormatError("policy bank was trained on a different map")
    n_cells, n_actions = doc["shape"]
    width = doc["width"]
    owners = tuple(ltl.simplify(ltl.parse(t)) for t in doc["owners"])
    q = np.zeros((len(owners), n_cells, n_actions))
    for i, rows in enumerate(doc["owners"].values()):
        for r, c, a, v in rows:
            q[i, r * width + c, a] = v
    members = set(owners)
    for f in owners:
        for sigma in ltl.all_assignments(ltl.atoms(f)):
            g = ltl.progress(f, sigma)
            if g != TRUE and g != FALSE and g not in members:
                raise BankFormatError(f"bank not closed under progression: {ltl.to_text(f)} -> {ltl.to_text(g)}")
    return PolicyBank(owners, q, doc["map"], width)
