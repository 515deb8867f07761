from pathlib import Path

import numpy as np
import pytest

from routeseq import synthgraph
from routeseq.graph import filter_bbox, parse_graph, serialize_graph

DATA_FILE = Path(__file__).resolve().parent.parent / "data" / "mn_synth.graph"


@pytest.fixture(scope="module")
def full_graph():
    return synthgraph.generate()


def test_total_node_count(full_graph):
    assert full_graph.num_nodes == synthgraph.TOTAL_NODES == 2642


def test_filtered_counts_exact(full_graph):
    sub = filter_bbox(full_graph, synthgraph.INNER_BOX)
    assert sub.num_nodes == 376
    assert sub.num_edges == 455
    assert sub.mean_degree() == pytest.approx(2.42, abs=0.01)


def test_inner_subgraph_is_connected(full_graph):
    sub = filter_bbox(full_graph, synthgraph.INNER_BOX)
    seen = np.zeros(sub.num_nodes, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        u = stack.pop()
        for v in sub.adjacency[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(int(v))
    assert seen.all()


def test_generation_is_deterministic(full_graph):
    again = synthgraph.generate()
    assert serialize_graph(again) == serialize_graph(full_graph)


def test_committed_data_file_matches_generator(full_graph):
    committed = parse_graph(DATA_FILE.read_text())
    assert serialize_graph(committed) == serialize_graph(full_graph)
