import itertools

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from ltl_transfer import ltl
from ltl_transfer.gridworld import builtin_map

settings.register_profile("default", max_examples=150, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def formulas(props=("a", "b", "c"), max_depth=4, temporal=True):
    """Random co-safe NNF formulas over ``props``."""
    leaves = st.sampled_from([ltl.Atom(p) for p in props] + [ltl.NegAtom(p) for p in props] + [ltl.TRUE, ltl.FALSE])

    def extend(children):
        opts = [
            st.tuples(children, children).map(lambda t: ltl.And(*t)),
            st.tuples(children, children).map(lambda t: ltl.Or(*t)),
        ]
        if temporal:
            opts += [
                children.map(ltl.Next),
                children.map(ltl.Eventually),
                children.map(ltl.Globally),
                st.tuples(children, children).map(lambda t: ltl.Until(*t)),
            ]
        return st.one_of(opts)

    return st.recursive(leaves, extend, max_leaves=2 ** (max_depth - 1))


def traces(props=("a", "b", "c"), min_size=1, max_size=4):
    sigma = st.frozensets(st.sampled_from(props))
    return st.lists(sigma, min_size=min_size, max_size=max_size)


def all_traces(props, max_len):
    sigmas = list(ltl.all_assignments(props))
    for n in range(1, max_len + 1):
        yield from itertools.product(sigmas, repeat=n)


@pytest.fixture(scope="session")
def detour():
    return builtin_map("detour")


@pytest.fixture(scope="session")
def desk_a():
    return builtin_map("desk_a")


def shortest_completion(grid, f, s):
    """Fewest moves from ``s`` that drive ``f`` to true (start label not consumed), or None."""
    from collections import deque

    from ltl_transfer.gridworld import ACTIONS, label, step

    seen = {(s, f)}
    todo = deque([(s, f, 0)])
    while todo:
        p, q, d = todo.popleft()
        for a in ACTIONS:
            p2 = step(grid, p, a)
            q2 = ltl.progress(q, label(grid, p2))
            if q2 == ltl.TRUE:
                return d + 1
            if q2 != ltl.FALSE and (p2, q2) not in seen:
                seen.add((p2, q2))
                todo.append((p2, q2, d + 1))
    return None


def greedy_completion(bank, grid, f, s, cap=200):
    """Moves taken by the bank's greedy policies to satisfy ``f`` from ``s``, or None."""
    from ltl_transfer.gridworld import Action, label, step

    q = f
    for t in range(1, cap + 1):
        s = step(grid, s, Action(bank.greedy_policy(q)[grid.cell_index(s)]))
        q = ltl.progress(q, label(grid, s))
        if q == ltl.TRUE:
            return t
        if q == ltl.FALSE:
            return None
    return None


def spec(text):
    return ltl.simplify(ltl.to_nnf(ltl.parse(text)))


@pytest.fixture(scope="session")
def detour_banks(detour):
    """Policy bank and option bank trained on {F axe, F wood} over the 5x5 replica."""
    from ltl_transfer.learner import Hyperparams, extract_state_centric_options, train
    from ltl_transfer.option_compiler import compile

    tasks = [spec("F axe"), spec("F wood")]
    policies = train(detour, tasks, Hyperparams(seed=0))
    options = compile(detour, tasks, extract_state_centric_options(policies, tasks))
    return policies, options


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
