"""Greedy route decoding, bidirectional intersection, and Table-style
evaluation metrics.

A predicted pair is decoded twice (source->destination and the reverse),
the two node sequences are spliced at a common node, and the splice is
validated as a simple path of the graph.  A valid path counts as
*successful*; it additionally counts as *shortest* when its cost matches
the search oracle's within 1e-9 relative (equal-cost alternative optima
count as shortest).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .graph import Graph
from .routing import Route, astar
from .rng import SplitMix64

DEFAULT_CAP = 64  # about three times the average route length
COST_RTOL = 1e-9


@dataclass
class DecodedPath:
    nodes: list[int]
    terminated_by: str  # "destination" | "eos" | "cap"


@dataclass
class PairRecord:
    s: int
    t: int
    predicted: list[int] | None
    predicted_cost: float | None
    oracle_cost: float
    outcome: str  # "shortest" | "successful" | "failed"


@dataclass
class EvalReport:
    label: str
    records: list[PairRecord] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def shortest_count(self) -> int:
        return sum(1 for r in self.records if r.outcome == "shortest")

    @property
    def successful_count(self) -> int:
        return sum(1 for r in self.records if r.outcome in ("shortest", "successful"))

    @property
    def shortest_pct(self) -> float:
        return 100.0 * self.shortest_count / max(1, len(self.records))

    @property
    def successful_pct(self) -> float:
        return 100.0 * self.successful_count / max(1, len(self.records))

    def to_json(self) -> str:
        payload = {
            "label": self.label,
            "provenance": self.provenance,
            "shortest_pct": self.shortest_pct,
            "successful_pct": self.successful_pct,
            "pairs": len(self.records),
            "records": [
                {
                    "s": r.s,
                    "t": r.t,
                    "predicted": r.predicted,
                    "predicted_cost": r.predicted_cost,
                    "oracle_cost": r.oracle_cost,
                    "outcome": r.outcome,
                }
                for r in self.records
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        lines = ["s,t,outcome,predicted_cost,oracle_cost,predicted_nodes"]
        for r in self.records:
            pred = "" if r.predicted is None else " ".join(map(str, r.predicted))
            cost = "" if r.predicted_cost is None else repr(r.predicted_cost)
            lines.append(f"{r.s},{r.t},{r.outcome},{cost},{r.oracle_cost!r},{pred}")
        return "\n".join(lines) + "\n"


def report_from_json(text: str) -> EvalReport:
    payload = json.loads(text)
    report = EvalReport(label=payload["label"], provenance=payload.get("provenance", {}))
    for rec in payload["records"]:
        report.records.append(
            PairRecord(
                s=rec["s"],
                t=rec["t"],
                predicted=rec["predicted"],
                predicted_cost=rec["predicted_cost"],
                oracle_cost=rec["oracle_cost"],
                outcome=rec["outcome"],
            )
        )
    return report


# ---------------------------------------------------------------------------
# decoding


def greedy_decode(model, start: int, goal: int, cap: int = DEFAULT_CAP,
                  mask_mode: str = "previous") -> DecodedPath:
    """Greedy argmax decoding with the preceding node's logit masked out.

    ``mask_mode``: "previous" (default) masks only the node emitted at the
    immediately preceding step, "visited" masks the whole path so far,
    "none" decodes from the bare distribution.  EOS is never masked.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if mask_mode not in ("previous", "visited", "none"):
        raise ValueError(f"unknown mask mode {mask_mode!r}")
    path = [start]
    if start == goal:
        return DecodedPath(path, "destination")
    context = model.query_context((start, goal))
    state = model.decoder_state(context)
    head = model.head
    while len(path) < cap:
        x = model.dec_emb.rows([path[-1]])[0]
        state = model.decoder.step(x, state)
        logits = head.C @ state.h + head.c
        if mask_mode == "previous":
            logits[path[-1]] = -np.inf
        elif mask_mode == "visited":
            logits[path] = -np.inf
        nxt = int(np.argmax(logits))
        if nxt == model.config.eos_token:
            return DecodedPath(path, "eos")
        path.append(nxt)
        if nxt == goal:
            return DecodedPath(path, "destination")
    return DecodedPath(path, "cap")


def validate_path(g: Graph, path: list[int], s: int, t: int) -> str | None:
    """None when the path is a simple s->t walk over graph edges, else the
    reason it is not."""
    if not path:
        return "empty path"
    if path[0] != s:
        return f"starts at {path[0]}, not {s}"
    if path[-1] != t:
        return f"ends at {path[-1]}, not {t}"
    if len(set(path)) != len(path):
        return "repeated node"
    for k in range(len(path) - 1):
        u, v = path[k], path[k + 1]
        if v not in g.adjacency[u]:
            return f"missing edge ({u},{v})"
    return None


def bidirectional_intersect(g: Graph, forward: DecodedPath,
                            backward: DecodedPath) -> list[int] | None:
    """Splice the two decodes at a common node.

    Candidate index pairs (i, j) with forward[i] == backward[j] are tried
    in increasing i+j (ties: smaller i, then smaller j); the spliced path
    forward[0..i] + reversed(backward[0..j-1]) must validate as a simple
    path, otherwise the next candidate is tried.  None when no valid
    splice exists.
    """
    f, b = forward.nodes, backward.nodes
    s, t = f[0], b[0]
    for total in range(len(f) + len(b) - 1):
        for i in range(min(total, len(f) - 1) + 1):
            j = total - i
            if j >= len(b):
                continue
            if f[i] != b[j]:
                continue
            spliced = f[: i + 1] + b[:j][::-1]
            if validate_path(g, spliced, s, t) is None:
                return spliced
    return None


# ---------------------------------------------------------------------------
# evaluation


def evaluate(predictor, test_routes: list[Route], g: Graph, label: str,
             cap: int = DEFAULT_CAP, jobs: int = 1) -> EvalReport:
    """Decode both directions of every test pair, splice, and score."""

    def solve(route: Route) -> PairRecord:
        s, t = route.s, route.t
        fwd = predictor.decode(s, t, cap=cap)
        bwd = predictor.decode(t, s, cap=cap)
        spliced = bidirectional_intersect(g, fwd, bwd)
        if spliced is None:
            return PairRecord(s, t, None, None, route.cost, "failed")
        cost = g.path_cost(spliced)
        outcome = (
            "shortest" if cost <= route.cost * (1.0 + COST_RTOL) else "successful"
        )
        return PairRecord(s, t, spliced, cost, route.cost, outcome)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(solve, test_routes))
    else:
        records = [solve(r) for r in test_routes]
    return EvalReport(label=label, records=records)


# ---------------------------------------------------------------------------
# harness predictors (metric pipeline bounds, independent of any model)


class ModelPredictor:
    """Greedy bidirectional decoding of a trained model."""

    def __init__(self, model, mask_mode: str = "previous"):
        self.model = model
        self.mask_mode = mask_mode

    def decode(self, s: int, t: int, cap: int = DEFAULT_CAP) -> DecodedPath:
        return greedy_decode(self.model, s, t, cap=cap, mask_mode=self.mask_mode)


class OracleReplayPredictor:
    """Replays the search oracle; evaluates to 100% / 100% by construction."""

    def __init__(self, g: Graph):
        self.g = g

    def decode(self, s: int, t: int, cap: int = DEFAULT_CAP) -> DecodedPath:
        route = astar(self.g, s, t)
        if route is None:
            return DecodedPath([s], "cap")
        return DecodedPath(route.nodes, "destination")


class RandomWalkPredictor:
    """Uniform random neighbour walk; a near-0% floor for the pipeline."""

    def __init__(self, g: Graph, seed: int = 0):
        self.g = g
        self.seed = seed

    def decode(self, s: int, t: int, cap: int = DEFAULT_CAP) -> DecodedPath:
        rng = SplitMix64(self.seed).derive(s, t)
        path = [s]
        if s == t:
            return DecodedPath(path, "destination")
        while len(path) < cap:
            nbrs = self.g.adjacency[path[-1]]
            if len(nbrs) == 0:
                return DecodedPath(path, "eos")
            path.append(int(nbrs[rng.randint(len(nbrs))]))
            if path[-1] == t:
                return DecodedPath(path, "destination")
        return DecodedPath(path, "cap")


def model_label(config) -> str:
    base = f"{config.encoder_kind.upper()}2{config.decoder_kind.upper()}"
    if config.context_encoding == "fisher":
        return f"{base} with FV"
    if config.context_encoding == "vlad":
        return f"{base} with VLAD ({config.hidden_dim})"
    return f"{base} ({config.hidden_dim})"
