import random

import pytest

from conftest import spec
from ltl_transfer import ltl
from ltl_transfer.reward_machine import build_rm
from ltl_transfer.taskgen import (
    ExhaustedVocabulary,
    GenParams,
    InfeasibleParams,
    Link,
    SpecType,
    read_spec_file,
    render,
    sample_set,
    sample_spec,
    write_spec_file,
)

H, S, X = Link.HARD, Link.SOFT, Link.STRICT


def test_no_orders_three_subtasks():
    assert render(["a", "b", "c"], {}) == spec("F a & F b & F c")


def test_hard_chain_shape():
    got = render(["bridge", "workbench", "grass", "wood", "axe"], {0: H, 1: H, 2: H})
    want = spec("F wood & F axe & !wood U grass & !grass U workbench & !workbench U bridge")
    assert got == want


def test_single_hard_link_shape():
    got = render(["axe", "factory", "workbench", "iron", "shelter"], {0: H})
    assert got == spec("F workbench & F factory & F iron & F shelter & !factory U axe")


def test_soft_chain_nests():
    assert render(["bridge", "factory", "iron", "shelter"], {0: S, 1: S, 2: S}) == spec(
        "F(bridge & F(factory & F(iron & F shelter)))"
    )
    assert render(["workbench", "factory", "grass"], {1: S}) == spec("F workbench & F(factory & F grass)")


def test_strict_links_use_next():
    assert render(["a", "b"], {0: X}) == spec("F(a & X F b)")


def test_mixed_shapes():
    assert render(["toolshed", "grass", "factory", "workbench"], {0: H, 2: X}) == spec(
        "F grass & !grass U toolshed & F(factory & X F workbench)"
    )
    assert render(["shelter", "toolshed", "factory", "grass", "bridge"], {0: H, 3: S}) == spec(
        "F toolshed & F factory & !toolshed U shelter & F(grass & F bridge)"
    )


def test_spec_type_parse():
    assert SpecType.parse("StrictlySoft") is SpecType.STRICTLY_SOFT
    assert SpecType.parse("no-orders") is SpecType.NO_ORDERS
    with pytest.raises(ValueError):
        SpecType.parse("loose")


def test_param_validation():
    with pytest.raises(InfeasibleParams):
        GenParams(subtasks=(3, 2))
    with pytest.raises(InfeasibleParams):
        GenParams(subtasks=(2, 4), vocab=("a", "b", "c"))
    with pytest.raises(InfeasibleParams):
        GenParams(subtasks=(2, 3), constraints=(3, 3))


def test_empty_set():
    assert sample_set(SpecType.HARD, 0, GenParams()) == []


@pytest.mark.parametrize("t", list(SpecType))
def test_prefix_property(t):
    p = GenParams(seed=7)
    assert sample_set(t, 50, p)[:10] == sample_set(t, 10, p)


@pytest.mark.parametrize("t", list(SpecType))
def test_sets_are_distinct_and_seeded(t):
    p = GenParams(seed=3)
    a = sample_set(t, 40, p)
    assert len(set(a)) == 40
    assert a == sample_set(t, 40, p)
    assert a != sample_set(t, 40, GenParams(seed=4))


def test_exclusion():
    p = GenParams(seed=1)
    pool = sample_set(SpecType.MIXED, 20, p)
    test = sample_set(SpecType.MIXED, 30, GenParams(seed=2), exclude=pool)
    assert not set(pool) & set(test)


def test_exhausted_vocabulary():
    p = GenParams(subtasks=(2, 2), constraints=(1, 1), vocab=("a", "b"))
    assert len(sample_set(SpecType.HARD, 2, p)) == 2
    with pytest.raises(ExhaustedVocabulary):
        sample_set(SpecType.HARD, 3, p, max_tries=200)


def test_hard_sets_can_fail_irrecoverably():
    for f in sample_set(SpecType.HARD, 50, GenParams(seed=0)):
        rm = build_rm(f)
        assert ltl.FALSE in rm.states


@pytest.mark.parametrize("t", [SpecType.SOFT, SpecType.STRICTLY_SOFT, SpecType.NO_ORDERS])
def test_soft_sets_never_fail(t):
    for f in sample_set(t, 50, GenParams(seed=0)):
        rm = build_rm(f)
        assert not rm.dead_states


@pytest.mark.parametrize("t", list(SpecType))
def test_samples_are_well_formed(t):
    rng = random.Random(5)
    p = GenParams()
    for _ in range(30):
        f = sample_spec(t, p, rng)
        assert ltl.is_nnf(f)
        assert f == ltl.simplify(f)
        assert ltl.simplify(ltl.parse(ltl.to_text(f))) == f
        n = len(ltl.atoms(f))
        assert 2 <= n <= 5
        build_rm(f)


def test_no_orders_has_no_links():
    for f in sample_set(SpecType.NO_ORDERS, 20, GenParams(seed=9)):
        parts = f.children if isinstance(f, ltl.And) else (f,)
        assert all(isinstance(c, ltl.Eventually) and isinstance(c.child, ltl.Atom) for c in parts)


def test_spec_file_roundtrip(tmp_path):
    p = GenParams(seed=2)
    fs = sample_set(SpecType.MIXED, 15, p)
    path = tmp_path / "mixed.txt"
    write_spec_file(path, fs, SpecType.MIXED, p)
    text = path.read_text()
    assert text.startswith("# type: mixed")
    assert read_spec_file(path) == fs
