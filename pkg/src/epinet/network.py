"""Weighted directed attention graph between agents, updated at round barriers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

log = logging.getLogger(__name__)

DECAY = 0.1
COLLAB_WEIGHT = 1.0
CITATION_WEIGHT = 0.5
REVIEW_WEIGHT = 0.1
EDGE_THRESHOLD = 0.5
TOP_PAIRS = 10


@dataclass
class AttentionGraph:
    round: int = 0
    weights: dict[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        for (a, b), w in self.weights.items():
            if a == b:
                raise ValueError(f"self-edge {a}->{a}")
            if not (math.isfinite(w) and w >= 0):
                raise ValueError(f"bad weight {w} on {a}->{b}")

    def weight(self, src: str, dst: str) -> float:
        return self.weights.get((src, dst), 0.0)

    def edges(self, threshold: float = 0.0) -> set[tuple[str, str]]:
        return {e for e, w in self.weights.items() if w > threshold}

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "edges": [[a, b, w] for (a, b), w in sorted(self.weights.items())],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AttentionGraph":
        return cls(doc["round"], {(a, b): float(w) for a, b, w in doc["edges"]})


@dataclass
class RoundEvents:
    """Attention events of a single round.

    collaborations: (principal, collaborator) pairs
    citations: (citing primary author, cited primary author) pairs
    reviews: (reviewer, author) pairs
    """

    collaborations: list[tuple[str, str]] = field(default_factory=list)
    citations: list[tuple[str, str]] = field(default_factory=list)
    reviews: list[tuple[str, str]] = field(default_factory=list)

    def increments(self) -> list[tuple[str, str, float]]:
        out = []
        for a, b in self.collaborations:
            out.append((a, b, COLLAB_WEIGHT))
            out.append((b, a, COLLAB_WEIGHT))
        out.extend((a, b, CITATION_WEIGHT) for a, b in self.citations)
        out.extend((a, b, REVIEW_WEIGHT) for a, b in self.reviews)
        return out


def update_attention(graph: AttentionGraph, events: RoundEvents, decay: float = DECAY) -> AttentionGraph:
    """w' = (1 - decay) w + sum of event increments. Returns a new graph."""
    if not 0.0 <= decay < 1.0:
        raise ValueError("decay must be in [0, 1)")
    new = {e: (1.0 - decay) * w for e, w in graph.weights.items()}
    # sorted so the float sums do not depend on event order
    for a, b, inc in sorted(events.increments()):
        if a == b:
            log.debug("ignoring self-edge event %s->%s", a, b)
            continue
        new[(a, b)] = new.get((a, b), 0.0) + inc
    new = {e: w for e, w in new.items() if w > 0.0}
    return AttentionGraph(graph.round + 1, new)


def jaccard_distance(a: set, b: set) -> float:
    union = a | b
    if not union:
        return 0.0
    return 1.0 - len(a & b) / len(union)


def graph_metrics(
    graph: AttentionGraph,
    previous: Optional[AttentionGraph] = None,
    agents: Sequence[str] = (),
    threshold: float = EDGE_THRESHOLD,
    top: int = TOP_PAIRS,
) -> dict:
    """Degree distributions, weighted degree, churn and strongest pairs.

    Degrees count edges above ``threshold``; ``agents`` lists nodes that
    should appear even when isolated.
    """
    nodes = set(agents)
    for a, b in graph.weights:
        nodes.update((a, b))
    strong = graph.edges(threshold)
    out_deg = {n: 0 for n in nodes}
    in_deg = {n: 0 for n in nodes}
    for a, b in strong:
        out_deg[a] += 1
        in_deg[b] += 1
    w_out = {n: 0.0 for n in nodes}
    w_in = {n: 0.0 for n in nodes}
    for (a, b), w in graph.weights.items():
        w_out[a] += w
        w_in[b] += w
    prev_strong = previous.edges(threshold) if previous is not None else set()
    pairs = sorted(graph.weights.items(), key=lambda kv: (-kv[1], kv[0]))[:top]
    return {
        "round": graph.round,
        "n_edges": len(strong),
        "out_degree": dict(sorted(out_deg.items())),
        "in_degree": dict(sorted(in_deg.items())),
        "weighted_out_degree": dict(sorted(w_out.items())),
        "weighted_in_degree": dict(sorted(w_in.items())),
        "churn": jaccard_distance(strong, prev_strong),
        "strongest_pairs": [[a, b, w] for (a, b), w in pairs],
    }


def events_from_round(outputs: Iterable, reviews: Iterable, accepted_records: Iterable, cited_primary) -> RoundEvents:
    """Collect a round's attention events.

    Collaborations come from all outputs, reviews from all panels, and
    citations from accepted papers only (rejected outputs cite nobody).
    ``cited_primary`` maps a paper id to its primary author.
    """
    outputs = list(outputs)
    ev = RoundEvents()
    for o in outputs:
        for c in o.collab_agent_ids:
            ev.collaborations.append((o.primary_agent_id, c))
    by_id = {o.output_id: o for o in outputs}
    for r in reviews:
        for a in by_id[r.output_id].authors:
            ev.reviews.append((r.reviewer_id, a))
    for rec in accepted_records:
        for pid in rec.cited_ids():
            ev.citations.append((rec.primary_agent_id, cited_primary(pid)))
    return ev
