"""Ground-truth shortest routes via A* (with Dijkstra as cross-check) and
the labeled route corpus.

Edge weight is the planar Euclidean length of the edge, which makes the
straight-line heuristic admissible.  Ties in the priority queue break on
(lower f, lower g, lower node id) so searches are fully deterministic.

Routes file: JSON lines.  The first line is a header object carrying the
graph digest, seed, and count; each following line is one route:
``{"s":int,"t":int,"nodes":[...],"cost":float,"split":"train"|"test"}``.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

from .graph import Graph
from .rng import SplitMix64


@dataclass
class Route:
    nodes: list[int]
    cost: float

    @property
    def s(self) -> int:
        return self.nodes[0]

    @property
    def t(self) -> int:
        return self.nodes[-1]

    @property
    def hops(self) -> int:
        # Hops count edges: a path of k nodes is k-1 hops.
        return len(self.nodes) - 1


@dataclass
class RouteDataset:
    graph_hash: str
    seed: int
    count: int
    train: list[Route] = field(default_factory=list)
    test: list[Route] = field(default_factory=list)

    @property
    def routes(self) -> list[Route]:
        return self.train + self.test


def _search(g: Graph, s: int, t: int, heuristic) -> Route | None:
    """Best-first search; returns None when t is unreachable from s."""
    n = g.num_nodes
    if not (0 <= s < n and 0 <= t < n):
        raise ValueError("invalid endpoint")
    if s == t:
        return Route([s], 0.0)
    INF = float("inf")
    dist = [INF] * n
    parent = [-1] * n
    done = [False] * n
    dist[s] = 0.0
    heap = [(heuristic(s), 0.0, s)]
    while heap:
        f, gcost, u = heapq.heappop(heap)
        if done[u] or gcost > dist[u]:
            continue
        if u == t:
            break
        done[u] = True
        for v in g.adjacency[u]:
            v = int(v)
            if done[v]:
                continue
            cand = gcost + g.euclid(u, v)
            if cand < dist[v]:
                dist[v] = cand
                parent[v] = u
                heapq.heappush(heap, (cand + heuristic(v), cand, v))
    if dist[t] == INF:
        return None
    nodes = [t]
    while nodes[-1] != s:
        nodes.append(parent[nodes[-1]])
    nodes.reverse()
    return Route(nodes, dist[t])


def astar(g: Graph, s: int, t: int) -> Route | None:
    return _search(g, s, t, lambda v: g.euclid(v, t))


def dijkstra(g: Graph, s: int, t: int) -> Route | None:
    return _search(g, s, t, lambda v: 0.0)


def generate_dataset(g: Graph, count: int, split: float, seed: int) -> RouteDataset:
    """Solve `count` distinct uniformly-sampled (s,t) pairs and split them.

    Pairs are ordered, s != t, sampled without replacement; unreachable
    pairs are resampled.  The split is applied after a seeded shuffle of
    the solved routes, so train/test membership is a pure function of
    (graph, count, split, seed).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not (0.0 < split < 1.0):
        raise ValueError("split must be in (0, 1)")
    n = g.num_nodes
    if n * (n - 1) < count:
        raise ValueError(f"graph too small for {count} distinct ordered pairs")
    rng = SplitMix64(seed)
    seen: set[tuple[int, int]] = set()
    routes: list[Route] = []
    attempts = 0
    max_attempts = 200 * count + 10_000
    while len(routes) < count:
        attempts += 1
        if attempts > max_attempts:
            raise ValueError(
                "could not sample enough reachable distinct pairs; "
                "graph may be too disconnected"
            )
        s = rng.randint(n)
        t = rng.randint(n)
        if s == t or (s, t) in seen:
            continue
        seen.add((s, t))
        route = astar(g, s, t)
        if route is None:
            continue
        routes.append(route)
    rng.shuffle(routes)
    n_train = max(1, round(count * split))
    return RouteDataset(
        graph_hash=g.digest(),
        seed=seed,
        count=count,
        train=routes[:n_train],
        test=routes[n_train:],
    )


def validate_route(g: Graph, route: Route, rel_tol: float = 1e-9) -> None:
    """Raise if the route is not a consistent path of g."""
    nodes = route.nodes
    if len(nodes) < 1:
        raise ValueError("empty route")
    for k in range(len(nodes) - 1):
        u, v = nodes[k], nodes[k + 1]
        if v not in g.adjacency[u]:
            raise ValueError(f"nodes {u},{v} are not adjacent")
    cost = g.path_cost(nodes)
    if abs(cost - route.cost) > rel_tol * max(1.0, abs(cost)):
        raise ValueError(f"stored cost {route.cost} != recomputed {cost}")


def save_dataset(ds: RouteDataset, path) -> None:
    with open(path, "w") as fh:
        header = {
            "graph_hash": ds.graph_hash,
            "seed": ds.seed,
            "count": ds.count,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for split_name, routes in (("train", ds.train), ("test", ds.test)):
            for r in routes:
                rec = {
                    "s": r.s,
                    "t": r.t,
                    "nodes": r.nodes,
                    "cost": r.cost,
                    "split": split_name,
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(path) -> RouteDataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        ds = RouteDataset(
            graph_hash=header["graph_hash"],
            seed=header["seed"],
            count=header["count"],
        )
        for line in fh:
            rec = json.loads(line)
            route = Route([int(x) for x in rec["nodes"]], float(rec["cost"]))
            (ds.train if rec["split"] == "train" else ds.test).append(route)
    return ds
