"""Zero-shot execution of unseen specifications with compiled options.

The test formula's reward machine is pruned to the edges some option can
serve under the chosen criterion.  From the current RM state the agent runs
matched options for the first edges of the surviving paths, best completion
probability first, dropping each one that fails to progress the machine.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ltl
from .edge_matcher import MatchCriterion, Matcher
from .gridworld import ACTIONS, GridMap, Position, label, step
from .ltl import TRUE, Formula
from .option_compiler import OptionBank, TransitionCentricOption
from .reward_machine import DEFAULT_PATH_LIMIT, RewardMachine, build_rm, first_edges, prune

RANDOM_BUDGET = 500


class FailureCause(enum.Enum):
    SPECIFICATION_FAILURE = "specification failure"
    NO_FEASIBLE_PATH = "no feasible path"
    OPTIONS_EXHAUSTED = "options exhausted"

    @property
    def slug(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class TransferConfig:
    criterion: MatchCriterion = MatchCriterion.RELAXED
    option_step_cap: int | None = None  # None: the bank's compile-time cap
    step_budget: int = 500
    path_limit: int = DEFAULT_PATH_LIMIT

    def __post_init__(self):
        if self.step_budget < 1 or self.path_limit < 1 or (self.option_step_cap is not None and self.option_step_cap < 1):
            raise ValueError("transfer caps must be positive")


@dataclass(frozen=True)
class StepRecord:
    t: int
    position: Position
    action: int
    assignment: frozenset
    rm_state: Formula
    active_option: str | None

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "position": list(self.position),
            "action": ACTIONS[self.action].name,
            "assignment": sorted(self.assignment),
            "rm_state": ltl.to_text(self.rm_state),
            "active_option": self.active_option,
        }


@dataclass
class TransferOutcome:
    formula: Formula
    success: bool
    cause: FailureCause | None = None
    steps: list[StepRecord] = field(default_factory=list)
    options_executed: list[tuple] = field(default_factory=list)  # (option id, start cell, achieved RM state)
    final_state: Formula | None = None
    note: str = ""

    @property
    def status(self) -> str:
        return "success" if self.success else "failure"

    @property
    def trace(self) -> list[frozenset]:
        return [r.assignment for r in self.steps]

    @property
    def actions(self) -> list[int]:
        return [r.action for r in self.steps]

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def summary(self) -> dict:
        return {
            "formula": ltl.to_text(self.formula),
            "status": self.status,
            "cause": None if self.cause is None else self.cause.value,
            "steps": self.n_steps,
            "options_executed": [
                {"option": " | ".join(oid), "start": list(s), "reached": ltl.to_text(q)} for oid, s, q in self.options_executed
            ],
            "final_state": None if self.final_state is None else ltl.to_text(self.final_state),
            "note": self.note,
        }


def option_label(o: TransitionCentricOption) -> str:
    return f"{o.id[0]} @ {o.id[1]} -> {o.id[2]}"


@dataclass
class ExecResult:
    position: Position
    state: Formula
    steps: list[StepRecord]


def execute_option(
    grid: GridMap,
    s: Position,
    option: TransitionCentricOption,
    rm: RewardMachine,
    q: Formula,
    step_cap: int,
    t0: int = 0,
) -> ExecResult:
    """Run the option's policy until its self guard fails, the RM moves, or ``step_cap``."""
    records = []
    name = option_label(option)
    for k in range(step_cap):
        a = option.action(grid, s)
        s = step(grid, s, a)
        sigma = label(grid, s)
        q2 = rm.transition(q, sigma)
        records.append(StepRecord(t0 + k, s, a, sigma, q2, name))
        if q2 != q:
            return ExecResult(s, q2, records)
        if not option.self_guard.holds(sigma):
            break
    return ExecResult(s, q, records)


class Planner:
    """Matched options for the edges of one test formula's RM, memoised."""

    def __init__(self, rm: RewardMachine, groups: GuardGroups, matcher: Matcher, criterion: MatchCriterion):
        self.rm = rm
        self.groups = groups
        self.matcher = matcher
        self.criterion = criterion
        self._edge_options: dict[tuple, list] = {}
        self._pruned: dict[Formula, RewardMachine] = {}

    def options_for(self, src: Formula, dst: Formula) -> list[TransitionCentricOption]:
        key = (src, dst)
        hit = self._edge_options.get(key)
        if hit is None:
            rm = self.rm
            ok = self.matcher.match_all(
                self.criterion,
                self.groups.e1,
                self.groups.e2,
                rm.self_edge(src),
                rm.edges[src, dst],
                rm.failure_guards(src),
                tag=id(self.groups),
            )
            hit = [o for i in np.flatnonzero(ok) for o in self.groups.members[i]]
            self._edge_options[key] = hit
        return hit

    def pruned(self, root: Formula) -> RewardMachine:
        if root not in self._pruned:
            self._pruned[root] = prune(self.rm, lambda es, eg, src, dst: bool(self.options_for(src, dst)), root=root)
        return self._pruned[root]

    def frontier(self, q: Formula) -> list[TransitionCentricOption]:
        """Options matched to the first edge of some surviving path from ``q``."""
        pruned = self.pruned(self.rm.initial)
        if q not in pruned:
            pruned = self.pruned(q)
        seen = {}
        for dst, _ in first_edges(pruned, q):
            for o in self.options_for(q, dst):
                seen.setdefault(id(o), o)
        return list(seen.values())


class GuardGroups:
    """Bank options grouped by their (self guard, target guard) pair, as mask arrays."""

    def __init__(self, options, matcher: Matcher):
        groups: dict[tuple, list] = {}
        for o in sorted(options, key=lambda o: o.id):
            groups.setdefault((o.self_guard, o.target_guard), []).append(o)
        self.members = list(groups.values())
        self.e1 = matcher.masks(k[0] for k in groups)
        self.e2 = matcher.masks(k[1] for k in groups)


class TransferContext:
    """Per-bank state shared across many test formulas: guard groups and the matcher."""

    def __init__(self, grid: GridMap, bank: OptionBank):
        if bank.map_digest and bank.map_digest != grid.digest:
            from .option_compiler import MapMismatch

            raise MapMismatch("option bank was compiled on a different map")
        self.grid = grid
        self.bank = bank
        self.matcher = Matcher(grid.label_image)
        self.groups = GuardGroups(bank.options, self.matcher)


def _as_formula(phi) -> Formula:
    if isinstance(phi, str):
        phi = ltl.parse(phi)
    return ltl.simplify(ltl.to_nnf(phi))


def transfer(
    grid: GridMap,
    phi_test,
    bank: OptionBank,
    cfg: TransferConfig = TransferConfig(),
    context: TransferContext | None = None,
) -> TransferOutcome:
    phi = _as_formula(phi_test)
    ctx = context if context is not None else TransferContext(grid, bank)
    rm = build_rm(phi)
    planner = Planner(rm, ctx.groups, ctx.matcher, cfg.criterion)
    cap = cfg.option_step_cap or bank.step_cap
    out = TransferOutcome(phi, False)
    s, q = grid.start, rm.initial

    while q != TRUE:
        if rm.is_dead(q):
            out.cause = FailureCause.SPECIFICATION_FAILURE
            break
        frontier = planner.frontier(q)
        if not frontier:
            out.cause = FailureCause.NO_FEASIBLE_PATH if not out.options_executed else FailureCause.OPTIONS_EXHAUSTED
            if out.options_executed:
                out.note = "no matched path from the state reached"
            break
        remaining = list(frontier)
        progressed = False
        while remaining and out.n_steps < cfg.step_budget:
            # ranked at the agent's current cell; zero-completion options would
            # leave their self guard through an edge nobody matched
            cell = grid.cell_index(s)
            live = [o for o in remaining if o.f[cell] > 0]
            if not live:
                break
            o = min(live, key=lambda o: (-o.f[cell], o.id))
            remaining.remove(o)
            budget = cfg.step_budget - out.n_steps
            res = execute_option(grid, s, o, rm, q, min(cap, budget), t0=out.n_steps)
            out.steps.extend(res.steps)
            s = res.position
            out.options_executed.append((o.id, s, res.state))
            if res.state != q:
                q = res.state
                progressed = True
                break
        if not progressed:
            out.cause = FailureCause.OPTIONS_EXHAUSTED
            if out.n_steps >= cfg.step_budget:
                out.note = "step budget exhausted"
            break

    out.final_state = q
    out.success = q == TRUE
    if out.success:
        out.cause = None
    return out


def diagnose(outcome: TransferOutcome) -> dict:
    """Failure category and per-cause counts; empty for a success."""
    if outcome.success:
        return {}
    counts = {c.value: 0 for c in FailureCause}
    counts[outcome.cause.value] = 1
    report = {"category": outcome.cause.value, "counts": counts}
    if outcome.note:
        report["note"] = outcome.note
    return report


def write_trajectory(outcome: TransferOutcome, path: str | Path) -> None:
    """JSON lines: one record per step, then an outcome footer."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in outcome.steps:
            fh.write(json.dumps(r.to_json()) + "\n")
        fh.write(json.dumps({"outcome": outcome.summary()}) + "\n")


def _run_policy(grid, rm, out, budget, choose):
    s, q = grid.start, rm.initial
    while q != TRUE and not rm.is_dead(q) and out.n_steps < budget:
        a = choose(s, q)
        if a is None:
            break
        s = step(grid, s, a)
        sigma = label(grid, s)
        q = rm.transition(q, sigma)
        out.steps.append(StepRecord(out.n_steps, s, int(a), sigma, q, None))
    out.final_state = q
    out.success = q == TRUE
    if out.success:
        return out
    if rm.is_dead(q):
        out.cause = FailureCause.SPECIFICATION_FAILURE
    else:
        out.cause = FailureCause.OPTIONS_EXHAUSTED
        out.note = "step budget exhausted" if out.n_steps >= budget else "no policy for the state reached"
    return out


def random_baseline(grid: GridMap, phi_test, budget: int = RANDOM_BUDGET, seed: int = 0) -> TransferOutcome:
    """Uniformly random actions for ``budget`` steps."""
    phi = _as_formula(phi_test)
    rm = build_rm(phi)
    rng = np.random.default_rng(seed)
    draws = iter(rng.integers(len(ACTIONS), size=budget).tolist())
    return _run_policy(grid, rm, TransferOutcome(phi, False), budget, lambda s, q: next(draws))


def lpopl_baseline(grid: GridMap, phi_test, policies: dict, budget: int = RANDOM_BUDGET) -> TransferOutcome:
    """Follow learned subpolicies only while the RM state is one of their owners.

    A formula outside the training progression set is not attempted.
    """
    phi = _as_formula(phi_test)
    rm = build_rm(phi)
    out = TransferOutcome(phi, False)
    if rm.initial != TRUE and rm.initial not in policies:
        out.final_state = rm.initial
        out.cause = FailureCause.NO_FEASIBLE_PATH
        out.note = "formula outside the training progression set"
        return out

    def choose(s, q):
        pol = policies.get(q)
        return None if pol is None else pol[grid.cell_index(s)]

    return _run_policy(grid, rm, out, budget, choose)
