import pytest

from smartassign.domain import (
    CaseRecord,
    Cell,
    MediatorProfile,
    Roster,
    accredited_mediators,
    build_state_graph,
    ceil_day,
    id_sort_key,
    is_shadow_id,
    shadow_id,
)
from smartassign.errors import AccreditationGap

from conftest import CELL_A, CELL_B, make_case


def test_accredited_cell_b_only_mediator_1(scenario1):
    assert accredited_mediators(make_case(cell=CELL_B), scenario1) == {"1"}


def test_accredited_cell_a_everyone(scenario1):
    assert accredited_mediators(make_case(cell=CELL_A), scenario1) == {"1", "2", "3"}


def test_accredited_uncovered_cell_is_empty(scenario1):
    assert accredited_mediators(make_case(cell=Cell("9", "Z")), scenario1) == set()


def test_graph_single_real_case_cell_a(scenario1):
    g = build_state_graph([make_case()], [], scenario1)
    assert set(g.mediator_nodes) == {"1", "2", "3"}
    assert g.case_nodes == ("v",)
    assert len(g.edges) == 3


def test_graph_empty():
    g = build_state_graph([], [], [])
    assert g.is_empty and g.edges == ()


def test_graph_real_b_plus_shadow_a(scenario1):
    real = make_case("b", CELL_B)
    sh = CaseRecord(shadow_id(0), CELL_A, 0.5, 3.0, is_shadow=True)
    g = build_state_graph([real], [sh], scenario1)
    assert set(g.mediator_nodes) == {"1", "2", "3"}
    assert set(g.edges) == {("1", "b"), ("1", sh.id), ("2", sh.id), ("3", sh.id)}


def test_graph_weights_are_va_plus_p(scenario1):
    vas = {m.id: m.true_va for m in scenario1}
    g = build_state_graph([make_case(p=0.4)], [], scenario1, vas)
    assert g.weights[("3", "v")] == pytest.approx(-0.1 + 0.4)


def test_graph_real_case_without_mediator_raises(scenario1):
    with pytest.raises(AccreditationGap):
        build_state_graph([make_case(cell=Cell("9", "Z"))], [], scenario1)


def test_graph_keeps_isolated_shadow(scenario1):
    sh = CaseRecord(shadow_id(1), Cell("9", "Z"), 0.5, 1.0, is_shadow=True)
    g = build_state_graph([], [sh], scenario1)
    assert g.case_nodes == (sh.id,) and g.edges == () and g.mediator_nodes == ()


def test_mediator_absent_when_not_accredited_for_any_case(scenario1):
    g = build_state_graph([make_case(cell=CELL_B)], [], scenario1)
    assert g.mediator_nodes == ("1",)


def test_shadow_ids_are_reserved():
    assert is_shadow_id(shadow_id(4))
    assert not is_shadow_id("4")


def test_shadow_case_cannot_be_assigned():
    with pytest.raises(ValueError):
        CaseRecord(shadow_id(0), CELL_A, 0.5, is_shadow=True, assigned_mediator="1")


def test_case_rejects_bad_p():
    with pytest.raises(ValueError):
        make_case(p=1.2)


def test_outcome_requires_assignment_and_conclusion():
    with pytest.raises(ValueError):
        CaseRecord("x", CELL_A, 0.5, outcome=True)


def test_mediator_validation():
    with pytest.raises(ValueError):
        MediatorProfile("m", set(), 3)
    with pytest.raises(ValueError):
        MediatorProfile("m", {CELL_A}, -1)


def test_roster_rejects_duplicates(scenario1):
    with pytest.raises(ValueError):
        Roster(scenario1 + scenario1[:1])


def test_id_sort_key_orders_numbers_numerically():
    assert sorted(["10", "2", "b", "1"], key=id_sort_key) == ["1", "2", "10", "b"]


@pytest.mark.parametrize("t,day", [(0.2, 1), (1.0, 1), (1.0000001, 2), (59.5, 60), (0.0, 1)])
def test_ceil_day(t, day):
    assert ceil_day(t) == day
