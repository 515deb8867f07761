import itertools

import pytest

from routeseq.graph import parse_graph
from routeseq.routing import (
    Route,
    astar,
    dijkstra,
    generate_dataset,
    load_dataset,
    save_dataset,
    validate_route,
)

SQUARE = """\
nodes 4 edges 5
v 0 0.0 0.0
v 1 1.0 0.0
v 2 1.0 1.0
v 3 0.0 1.0
e 0 1
e 1 2
e 2 3
e 3 0
e 0 2
"""

LINE = """\
nodes 3 edges 2
v 0 0.0 0.0
v 1 1.0 0.0
v 2 2.0 0.0
e 0 1
e 1 2
"""


def brute_force_shortest(g, s, t):
    """Enumerate every simple path; the independent oracle for fixtures."""
    if s == t:
        return [s], 0.0
    best = (None, float("inf"))
    stack = [([s], 0.0)]
    while stack:
        path, cost = stack.pop()
        u = path[-1]
        if u == t:
            if cost < best[1]:
                best = (path, cost)
            continue
        for v in g.adjacency[u]:
            if v not in path:
                stack.append((path + [int(v)], cost + g.euclid(u, int(v))))
    return best


def test_astar_trivial_same_node():
    g = parse_graph(SQUARE)
    r = astar(g, 2, 2)
    assert r.nodes == [2]
    assert r.cost == 0.0


def test_astar_takes_diagonal():
    g = parse_graph(SQUARE)
    r = astar(g, 0, 2)
    oracle_path, oracle_cost = brute_force_shortest(g, 0, 2)
    assert r.nodes == [0, 2] == oracle_path
    assert r.cost == pytest.approx(oracle_cost)


def test_astar_matches_brute_force_all_pairs():
    g = parse_graph(SQUARE)
    for s, t in itertools.permutations(range(4), 2):
        r = astar(g, s, t)
        _, oracle_cost = brute_force_shortest(g, s, t)
        assert r.cost == pytest.approx(oracle_cost, abs=1e-12)


def test_dijkstra_line_graph():
    g = parse_graph(LINE)
    r = dijkstra(g, 0, 2)
    assert r.nodes == [0, 1, 2]
    assert dijkstra(g, 1, 1).nodes == [1]


def test_astar_equals_dijkstra_on_fixture():
    g = parse_graph(SQUARE)
    for s, t in itertools.permutations(range(4), 2):
        assert astar(g, s, t).cost == dijkstra(g, s, t).cost


def test_heuristic_admissible_on_fixture():
    # straight-line distance never exceeds the true remaining cost
    g = parse_graph(SQUARE)
    for s, t in itertools.permutations(range(4), 2):
        for v in range(4):
            _, remaining = brute_force_shortest(g, v, t)
            if remaining < float("inf"):
                assert g.euclid(v, t) <= remaining + 1e-12


def test_unreachable_returns_none():
    g = parse_graph("nodes 3 edges 1\nv 0 0 0\nv 1 1 0\nv 2 9 9\ne 0 1\n")
    assert astar(g, 0, 2) is None
    assert dijkstra(g, 0, 2) is None


def test_generated_routes_validate():
    g = parse_graph(SQUARE)
    ds = generate_dataset(g, count=8, split=0.5, seed=11)
    assert len(ds.routes) == 8
    for r in ds.routes:
        validate_route(g, r)


def test_generate_dataset_split_and_disjoint_pairs():
    g = parse_graph(SQUARE)
    ds = generate_dataset(g, count=10, split=0.67, seed=3)
    assert len(ds.train) == 7  # round(10 * 0.67)
    assert len(ds.test) == 3
    pairs = [(r.s, r.t) for r in ds.routes]
    assert len(set(pairs)) == len(pairs)
    assert all(s != t for s, t in pairs)


def test_generate_dataset_single_route():
    g = parse_graph(SQUARE)
    ds = generate_dataset(g, count=1, split=0.67, seed=5)
    assert len(ds.train) == 1
    assert len(ds.test) == 0


def test_generate_dataset_is_pure():
    g = parse_graph(SQUARE)
    a = generate_dataset(g, count=6, split=0.5, seed=77)
    b = generate_dataset(g, count=6, split=0.5, seed=77)
    assert [(r.s, r.t, r.nodes, r.cost) for r in a.routes] == [
        (r.s, r.t, r.nodes, r.cost) for r in b.routes
    ]
    c = generate_dataset(g, count=6, split=0.5, seed=78)
    assert [(r.s, r.t) for r in a.routes] != [(r.s, r.t) for r in c.routes]


def test_generate_dataset_too_many_pairs_fails():
    g = parse_graph(LINE)
    with pytest.raises(ValueError):
        generate_dataset(g, count=100, split=0.5, seed=1)


def test_validate_route_rejects_bad_cost_and_gap():
    g = parse_graph(SQUARE)
    with pytest.raises(ValueError):
        validate_route(g, Route([0, 2], 99.0))
    with pytest.raises(ValueError):
        validate_route(g, Route([1, 3], g.euclid(1, 3)))  # not an edge


def test_dataset_file_roundtrip(tmp_path):
    g = parse_graph(SQUARE)
    ds = generate_dataset(g, count=8, split=0.5, seed=11)
    path = tmp_path / "routes.jsonl"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.graph_hash == ds.graph_hash
    assert back.seed == ds.seed and back.count == ds.count
    assert [(r.nodes, r.cost) for r in back.train] == [(r.nodes, r.cost) for r in ds.train]
    assert [(r.nodes, r.cost) for r in back.test] == [(r.nodes, r.cost) for r in ds.test]
    # byte-identical on rewrite
    path2 = tmp_path / "routes2.jsonl"
    save_dataset(back, path2)
    assert path.read_bytes() == path2.read_bytes()
