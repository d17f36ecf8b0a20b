"""d-separation and adjustment checks against independent oracles."""

import itertools

import numpy as np
import pytest

from stratinv.causal_graph import (
    LATENT,
    OBSERVED,
    CausalDag,
    anticausal_graph,
    causal_confounded_graph,
    causal_selection_graph,
    d_separated,
    dag,
    dump_dag,
    is_adjustment_set,
    load_dag,
    minimal_adjustment_sets,
    open_paths,
)
from stratinv.errors import GraphError, UnknownNode


# --- independent Bayes-ball d-separation oracle -----------------------------

def bayes_ball_connected(nodes, edges, x, y, given):
    """Ball-passing reachability; blocked everywhere iff d-separated."""
    given = set(given)
    parents = {n: set() for n in nodes}
    children = {n: set() for n in nodes}
    for a, b in edges:
        parents[b].add(a)
        children[a].add(b)
    # seed: ball leaves x upward to parents and downward to children
    frontier = [(p, "up") for p in parents[x]] + [(c, "down") for c in children[x]]
    seen = set()
    while frontier:
        v, direction = frontier.pop()
        if (v, direction) in seen:
            continue
        seen.add((v, direction))
        if v == y:
            return True
        if direction == "up":
            # arrived from a child; passes through unless conditioned
            if v not in given:
                frontier += [(p, "up") for p in parents[v]]
                frontier += [(c, "down") for c in children[v]]
        else:
            # arrived from a parent; collider bounce when conditioned
            if v in given:
                frontier += [(p, "up") for p in parents[v]]
            else:
                frontier += [(c, "down") for c in children[v]]
    return False


def oracle_backdoor(nodes, edges, marks, treatment, outcome, candidate):
    """Classical criterion: no treatment descendants, back-door paths blocked."""
    desc = set()
    frontier = [b for a, b in edges if a == treatment]
    while frontier:
        v = frontier.pop()
        if v not in desc:
            desc.add(v)
            frontier += [b for a, b in edges if a == v]
    if set(candidate) & desc:
        return False
    if any(marks[c] == LATENT for c in candidate):
        return False
    trimmed = [(a, b) for a, b in edges if a != treatment]
    return not bayes_ball_connected(nodes, trimmed, treatment, outcome, candidate)


def test_d_separated_hand_cases():
    g = dag(["A", "B", "C"], [("A", "B"), ("B", "C")])  # chain
    assert not d_separated(g, "A", "C")
    assert d_separated(g, "A", "C", ["B"])

    g = dag(["A", "B", "C"], [("B", "A"), ("B", "C")])  # fork
    assert not d_separated(g, "A", "C")
    assert d_separated(g, "A", "C", ["B"])

    g = dag(["A", "B", "C"], [("A", "B"), ("C", "B")])  # collider
    assert d_separated(g, "A", "C")
    assert not d_separated(g, "A", "C", ["B"])

    # conditioning on a collider's descendant also opens it
    g = dag(["A", "B", "C", "D"], [("A", "B"), ("C", "B"), ("B", "D")])
    assert not d_separated(g, "A", "C", ["D"])


def test_d_separation_matches_bayes_ball_on_random_dags():
    rng = np.random.default_rng(42)
    names = ["N0", "N1", "N2", "N3", "N4"]
    for _ in range(60):
        edges = [
            (names[i], names[j])
            for i in range(5)
            for j in range(i + 1, 5)
            if rng.random() < 0.4
        ]
        g = dag(names, edges)
        for a, b in [("N0", "N4"), ("N1", "N3")]:
            for r in range(3):
                given = [n for n in names if n not in (a, b) and rng.random() < 0.4]
                expected = not bayes_ball_connected(names, edges, a, b, given)
                assert d_separated(g, a, b, given) == expected, (edges, a, b, given)


def test_adjustment_matches_backdoor_oracle_on_childless_outcomes():
    # Restricted regime (no selection nodes, outcome has no children) where
    # the implemented rule and the classical criterion provably coincide.
    rng = np.random.default_rng(7)
    names = ["L", "A", "Z", "B", "X"]
    marks = {"L": LATENT, "A": OBSERVED, "Z": OBSERVED, "B": OBSERVED, "X": OBSERVED}
    observables = ["A", "B"]
    checked = 0
    for _ in range(40):
        order = ["L", "A", "Z", "B", "X"]  # X last, hence childless
        edges = [
            (order[i], order[j])
            for i in range(4)
            for j in range(i + 1, 5)
            if rng.random() < 0.45
        ]
        g = dag(marks, edges)
        candidates = [()] + [(c,) for c in observables] + [tuple(observables)]
        for cand in candidates:
            got = is_adjustment_set(g, "Z", "X", cand).valid
            want = oracle_backdoor(names, edges, marks, "Z", "X", cand)
            assert got == want, (edges, cand)
            checked += 1
    assert checked == 160


def test_reference_graph_verdicts():
    cases = [
        (anticausal_graph(), ("Y",), True),
        (anticausal_graph(), (), False),
        (causal_confounded_graph(), (), True),
        (causal_selection_graph(), ("Y",), True),
        (causal_selection_graph(), (), False),
    ]
    for g, cand, want in cases:
        assert is_adjustment_set(g, "Z", "X", cand).valid is want


def test_anticausal_rejection_names_the_confounding_path():
    report = is_adjustment_set(anticausal_graph(), "Z", "X", ())
    assert not report.valid
    assert any("Z <- L -> Y -> X" in p for p in report.open_path_names)
    assert any("Z <- L -> Y -> X" in r for r in report.reasons)


def test_selection_rejection_mentions_selection_path():
    report = is_adjustment_set(causal_selection_graph(), "Z", "X", ())
    assert not report.valid
    # the opened path runs through the always-conditioned selection collider
    assert any("B" in p for p in report.open_path_names)


def test_minimal_sets_reference_graphs():
    assert minimal_adjustment_sets(anticausal_graph(), "Z", "X") == [
        frozenset({"Y"})
    ]
    assert minimal_adjustment_sets(causal_confounded_graph(), "Z", "X") == [
        frozenset()
    ]
    assert minimal_adjustment_sets(causal_selection_graph(), "Z", "X") == [
        frozenset({"Y"})
    ]


def test_latent_candidate_rejected_with_reason():
    report = is_adjustment_set(anticausal_graph(), "Z", "X", ("L",))
    assert not report.valid
    assert any("latent" in r.lower() for r in report.reasons)


def test_treatment_or_outcome_in_candidate_rejected():
    g = anticausal_graph()
    assert not is_adjustment_set(g, "Z", "X", ("Z",)).valid
    assert not is_adjustment_set(g, "Z", "X", ("X",)).valid


def test_unknown_node_errors():
    g = anticausal_graph()
    with pytest.raises(UnknownNode):
        is_adjustment_set(g, "Z", "Nope", ())
    with pytest.raises(UnknownNode):
        d_separated(g, "Z", "X", ["Nope"])


def test_cycle_rejected():
    with pytest.raises(GraphError):
        dag(["A", "B"], [("A", "B"), ("B", "A")])


def test_open_paths_lists_each_unblocked_route():
    g = dag(["Z", "U", "X"], [("U", "Z"), ("U", "X"), ("Z", "X")])
    paths = open_paths(g, "Z", "X", given=())
    assert ("Z", "X") in paths
    assert ("Z", "U", "X") in paths


def test_dag_json_round_trip(tmp_path):
    g = causal_selection_graph()
    path = tmp_path / "g.json"
    import json

    path.write_text(json.dumps(dump_dag(g)))
    again = load_dag(path)
    assert again.nodes == g.nodes
    assert set(again.edges) == set(g.edges)
