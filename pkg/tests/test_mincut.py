import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from urbanfuse.mincut import BinaryEnergy, GraphTooLargeError, solve

from oracles import enumerate_energy


def random_energy(rng, n_max=15, e_max=30):
    n = int(rng.integers(1, n_max + 1))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    m = min(len(pairs), int(rng.integers(0, e_max + 1)))
    pick = rng.choice(len(pairs), size=m, replace=False) if m else []
    edges = np.array([pairs[k] for k in pick], dtype=np.int64).reshape(-1, 2)
    return rng.uniform(0, 10, size=(n, 2)), edges, rng.uniform(0, 10, size=m)


def test_single_node():
    r = solve(BinaryEnergy([[0.2, 0.8]]))
    assert r.labels.tolist() == [0]
    assert r.energy == pytest.approx(0.2)


def test_strong_coupling_picks_one_optimum():
    r = solve(BinaryEnergy([[0, 10], [10, 0]], [[0, 1]], [100]))
    assert r.labels.tolist() in ([0, 0], [1, 1])
    assert r.energy == pytest.approx(10)


def test_tie_goes_to_label_one():
    assert solve(BinaryEnergy([[0.5, 0.5]])).labels.tolist() == [1]


def test_empty_energy():
    assert len(solve(BinaryEnergy(np.zeros((0, 2)))).labels) == 0


def test_matches_enumeration_on_random_instances():
    rng = np.random.default_rng(123)
    for _ in range(200):
        unary, edges, w = random_energy(rng)
        best, _ = enumerate_energy(unary, edges, w)
        r = solve(BinaryEnergy(unary, edges, w))
        assert r.energy == pytest.approx(best, rel=1e-9, abs=1e-12)
        assert BinaryEnergy(unary, edges, w).evaluate(r.labels) == pytest.approx(r.energy)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.data())
def test_flow_plus_constant_equals_energy(n, data):
    unary = np.array(data.draw(st.lists(st.tuples(st.floats(0, 5), st.floats(0, 5)), min_size=n, max_size=n)))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = data.draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    w = data.draw(st.lists(st.floats(0, 5), min_size=len(chosen), max_size=len(chosen)))
    e = BinaryEnergy(unary, np.array(chosen, dtype=np.int64).reshape(-1, 2), w)
    r = solve(e)
    assert r.flow + r.constant == pytest.approx(r.energy, rel=1e-9, abs=1e-9)
    assert r.energy == pytest.approx(enumerate_energy(e.unary, e.edges, e.weights)[0], rel=1e-9, abs=1e-9)


@pytest.mark.parametrize(
    "unary, edges, weights, message",
    [
        ([[-1, 0]], None, None, "non-negative"),
        ([[np.nan, 0]], None, None, "finite"),
        ([[0, 0], [0, 0]], [[0, 0]], [1], "self-loop"),
        ([[0, 0], [0, 0]], [[0, 2]], [1], "out of range"),
        ([[0, 0], [0, 0]], [[0, 1], [1, 0]], [1, 1], "duplicate"),
        ([[0, 0], [0, 0]], [[0, 1]], [1, 2], "one weight per edge"),
    ],
)
def test_invalid_energies_rejected(unary, edges, weights, message):
    with pytest.raises(ValueError, match=message):
        BinaryEnergy(unary, edges, weights)


def test_memory_budget_guard():
    with pytest.raises(GraphTooLargeError):
        solve(BinaryEnergy(np.ones((100, 2)), [[i, i + 1] for i in range(99)], np.ones(99)), memory_budget_bytes=10)
