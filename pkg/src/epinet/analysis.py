"""Post-hoc metrics computed from a sealed run log."""
from __future__ import annotations

from collections import Counter, defaultdict
from typing import Sequence

import numpy as np

from .errors import IntegrityError
from .landscape import Landscape, PerceptionParams, novelty_of
from .runtime import RunLog

DUPLICATE_RADIUS = 0.05
GRID = 20
FRONTIER_TOP = 25


def duplication_rate(approaches: Sequence[Sequence[float]], radius: float = DUPLICATE_RADIUS) -> float:
    """Fraction of approaches within ``radius`` of an earlier one (order matters)."""
    pts = np.asarray(approaches, dtype=float)
    if len(pts) == 0:
        return 0.0
    dup = 0
    for i in range(1, len(pts)):
        d = np.sqrt(((pts[:i] - pts[i]) ** 2).sum(axis=1))
        dup += bool((d <= radius).any())
    return dup / len(pts)


def coverage_cells(approaches: Sequence[Sequence[float]], grid: int = GRID) -> set[tuple[int, ...]]:
    """Grid cells hit when projecting onto the first min(d, 2) coordinates."""
    cells = set()
    for a in approaches:
        a = list(a)[: min(len(a), 2)]
        cells.add(tuple(min(int(c * grid), grid - 1) for c in a))
    return cells


def coverage(approaches: Sequence[Sequence[float]], dim: int, grid: int = GRID) -> float:
    return len(coverage_cells(approaches, grid)) / grid ** min(dim, 2)


def analyze(runlog: RunLog) -> dict:
    """Metrics for duplication, coverage, significance, frontier, tools, network and trajectories."""
    runlog.verify()
    heads = runlog.of("run/v1")
    land = runlog.of("landscape/v1")
    if not heads or not land:
        raise IntegrityError("run log lacks its header lines")
    cfg = heads[0]["config"]
    rounds = cfg["rounds"]
    barriers = runlog.of("barrier/v1")
    if len(barriers) != rounds + 1:
        raise IntegrityError(f"log has {len(barriers)} barriers, expected {rounds + 1}")
    landscape = Landscape.from_json(land[0])
    perception = PerceptionParams(**cfg["perception"])

    papers = runlog.of("paper/v1")  # already in acceptance order
    accepted = [p["approach"] for p in papers]
    values = landscape.values(np.asarray(accepted, dtype=float)) if accepted else np.zeros(0)
    per_round = np.zeros(rounds)
    for p, v in zip(papers, values):
        per_round[p["round"]] += v

    # history at review time = papers accepted in earlier rounds
    outputs = runlog.of("output/v1")
    metas = {m["output_id"]: m for m in runlog.of("metareview/v1")}
    ranked = sorted(outputs, key=lambda o: (-metas[o["output_id"]]["overall_score"], o["output_id"]))
    frontier = []
    for o in ranked[:FRONTIER_TOP]:
        hist = [p["approach"] for p in papers if p["round"] < o["round"]]
        x = np.asarray(o["approach"], dtype=float)
        frontier.append(
            {
                "output_id": o["output_id"],
                "round": o["round"],
                "meta_score": metas[o["output_id"]]["overall_score"],
                "novelty": _novelty(x, hist, perception),
                "true_significance": float(landscape.values(x[None, :])[0]),
                "accepted": o["accepted"],
            }
        )

    tools: dict[str, Counter] = defaultdict(Counter)
    lengths: dict[str, list[int]] = defaultdict(list)
    for tr in runlog.of("trace/v1"):
        lengths[tr["agent_id"]].append(tr["session_length"])
        tools[tr["agent_id"]].update(s[1] for s in tr["steps"])

    trajectories: dict[str, list] = defaultdict(list)
    for o in outputs:
        trajectories[o["primary_agent_id"]].append([o["round"], o["approach"]])

    return {
        "mode": cfg["mode"],
        "seed": cfg["seed"],
        "n_outputs": len(outputs),
        "n_accepted": len(papers),
        "duplication_rate": duplication_rate(accepted),
        "coverage": coverage(accepted, landscape.dim),
        "coverage_cells": len(coverage_cells(accepted)),
        "significance_per_round": per_round.tolist(),
        "cumulative_significance": np.cumsum(per_round).tolist(),
        "frontier": frontier,
        "session_lengths": {a: lengths[a] for a in sorted(lengths)},
        "tool_usage": {a: dict(sorted(tools[a].items())) for a in sorted(tools)},
        "network": [n["metrics"] for n in runlog.of("network/v1")],
        "trajectories": {a: trajectories[a] for a in sorted(trajectories)},
    }


def _novelty(x: np.ndarray, hist: list, perception: PerceptionParams) -> float:
    from .landscape import Approach

    h = np.asarray(hist, dtype=float).reshape(-1, len(x))
    return novelty_of(Approach(tuple(x)), h, perception)
