"""One agent's research session: a budgeted plan -> act -> observe loop.

The engine executes tools; every decision (which tool, which approach, the
report text) comes from the backend through ``PlanStep`` and ``WriteReport``
requests, so the same loop drives simulated and external agents.
"""
from __future__ import annotations

import math
import threading
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .agents import (
    AgentState,
    MemoryEntry,
    Persona,
    belief_anchor,
    belief_estimate,
    sample_proposal,
    update_belief,
)
from .errors import BackendUnavailable, NotFoundError, ValidationError
from .landscape import Approach, Landscape, PerceptionParams, discount_factors, true_significance
from .stores import StoreView
from .utils import canonical_json, sha256_hex

TOOL_KINDS = (
    "QueryArchive",
    "QueryRegistry",
    "QueryMemory",
    "LiteratureSearch",
    "EstablishCollaboration",
    "Communicate",
    "RunAnalysis",
    "WriteReport",
)
NETWORK_TOOLS = ("QueryArchive", "QueryRegistry", "EstablishCollaboration", "Communicate")

SIGMA_MEAS = 0.05
CITATIONS_PER_OUTPUT = 3
ARCHIVE_K = 5
REGISTRY_K = 5
MEMORY_K = 3
PARTNER_SMOOTHING = 0.1

REPORT_SECTIONS = (
    "Title",
    "Research Question",
    "Hypothesis and Key Findings",
    "Rationale/Mechanism",
    "Empirical Evidence",
    "Literature Evidence",
    "Assumptions",
    "Limitations",
    "References",
)


@dataclass(frozen=True)
class ToolCall:
    kind: str
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in TOOL_KINDS:
            raise ValidationError(f"unknown tool kind {self.kind!r}")


@dataclass
class SessionBudget:
    max_steps: int = 40
    used: int = 0

    def __post_init__(self):
        if self.max_steps < 1:
            raise ValidationError("max_steps must be >= 1")

    @property
    def remaining(self) -> int:
        return self.max_steps - self.used

    def consume(self):
        if self.used >= self.max_steps:
            raise ValidationError("session budget exhausted")
        self.used += 1


@dataclass
class ResearchOutput:
    output_id: str
    round: int
    primary_agent_id: str
    collab_agent_ids: list[str]
    approach: Approach
    claimed_value: float
    title: str
    abstract: str
    report_text: str
    code_log: str
    citations: list[str]
    tool_trace: list[str]
    embedding: list[float] = field(default_factory=list)
    trace_steps: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def authors(self) -> list[str]:
        return [self.primary_agent_id, *self.collab_agent_ids]

    def to_json(self) -> dict:
        d = asdict(self)
        d["approach"] = list(self.approach.coords)
        d["trace_steps"] = [list(t) for t in self.trace_steps]
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "ResearchOutput":
        doc = dict(doc)
        doc.pop("schema", None)
        doc["approach"] = Approach(tuple(doc["approach"]))
        doc["trace_steps"] = [tuple(t) for t in doc.get("trace_steps", [])]
        return cls(**doc)


def make_output_id(run_seed: int, round_: int, agent_id: str) -> str:
    """Opaque id: sortable by round but carrying no author identity."""
    return f"o{round_:03d}-{sha256_hex(f'{run_seed}:{round_}:{agent_id}')[:10]}"


class Perceiver:
    """An agent's perceived value: belief estimate times the novelty discount."""

    def __init__(self, belief, history: np.ndarray, params: PerceptionParams):
        self.belief = belief
        self.history = history
        self.params = params

    def many(self, points: np.ndarray) -> np.ndarray:
        return self.belief.estimate_many(points) * discount_factors(points, self.history, self.params)

    def __call__(self, x: Approach) -> float:
        return float(self.many(x.as_array()[None, :])[0])


class MessageBus:
    """Collects collaboration messages; ordering is by (sender, channel, seq)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._messages: list[dict] = []

    def post(self, channel_id: str, sender: str, recipient: str, seq: int, body: dict):
        with self._lock:
            self._messages.append(
                {"channel": channel_id, "sender": sender, "recipient": recipient, "seq": seq, "body": body}
            )

    def messages(self) -> list[dict]:
        with self._lock:
            return sorted(self._messages, key=lambda m: (m["sender"], m["channel"], m["seq"]))

    def inbox(self, recipient: str) -> list[dict]:
        return [m for m in self.messages() if m["recipient"] == recipient]


class Channel:
    """Ordered principal <-> collaborator channel.

    The collaborator answers from its round-start belief snapshot, so its
    own session is never touched.
    """

    def __init__(self, principal: str, collaborator: str, collaborator_belief, bus: MessageBus, round_: int):
        self.principal = principal
        self.collaborator = collaborator
        self.id = f"r{round_:03d}:{principal}->{collaborator}"
        self._belief = collaborator_belief
        self._bus = bus
        self._seq = 0

    def ask(self, approach: Approach) -> float:
        advisory = belief_estimate(self._belief, approach)
        self._bus.post(self.id, self.principal, self.collaborator, self._seq, {"approach": list(approach.coords)})
        self._bus.post(self.id, self.collaborator, self.principal, self._seq, {"advisory": advisory})
        self._seq += 1
        return advisory


def establish_collaboration(principal: str, collaborator: str, view: StoreView, message_bus: MessageBus) -> Channel:
    if collaborator == principal:
        raise ValidationError("an agent cannot collaborate with itself")
    view.get_profile(collaborator)
    belief = view.beliefs.get(collaborator)
    if belief is None:
        raise NotFoundError(f"no belief snapshot for {collaborator!r}")
    return Channel(principal, collaborator, belief, message_bus, view.round)


def run_analysis(
    approach: Approach,
    landscape: Landscape,
    rng: np.random.Generator,
    sigma_meas: float = SIGMA_MEAS,
    budget: Optional[SessionBudget] = None,
) -> float:
    """Noisy measurement f(x) + eps; consumes one step when a budget is given."""
    if budget is not None:
        budget.consume()
    return true_significance(landscape, approach) + float(rng.normal(0.0, sigma_meas))


# -- simulation decision rules (pure functions of JSON payloads) -------------


def target_length(persona: Persona, max_steps: int) -> int:
    """Steps a persona intends to spend; lean personas write early."""
    frac = 0.25 + 0.75 * (1.0 + persona.stance_resources) / 2.0
    return max(1, min(max_steps, math.ceil(max_steps * frac)))


def plan_step_rule(p: dict) -> dict:
    rng = np.random.default_rng(p["seed"])
    persona = Persona(**p["persona"])
    disabled = set(p.get("disabled_tools", ()))
    anchor = Approach(tuple(p["anchor"]))
    step, m = p["step"], p["max_steps"]

    if step >= target_length(persona, m) - 1 or step >= m - 1:
        args = {}
        if p["n_measurements"] == 0:
            args["approach"] = list(sample_proposal(persona, anchor, rng).coords)
        return {"tool": "WriteReport", "args": args}

    state = p["collab_state"]
    if state == "searching" and p.get("collab_candidates"):
        cands = p["collab_candidates"]
        w = np.array([c["weight"] for c in cands], dtype=float)
        idx = int(np.searchsorted(np.cumsum(w / w.sum()), rng.random(), side="right"))
        idx = min(idx, len(cands) - 1)
        return {"tool": "EstablishCollaboration", "args": {"collaborator_id": cands[idx]["agent_id"]}}
    if state == "established":
        return {"tool": "Communicate", "args": {"approach": list(anchor.coords)}}
    if state == "undecided" and p["n_measurements"] >= 1 and "EstablishCollaboration" not in disabled:
        if rng.random() < (1.0 + persona.stance_collaboration) / 2.0:
            return {"tool": "QueryRegistry", "args": {"k": REGISTRY_K, "purpose": "collaboration"}}

    lit = (1.0 + persona.stance_literature) / 2.0
    options = []
    if "QueryArchive" not in disabled and not p.get("archive_queried"):
        options.append(("QueryArchive", 0.3 * lit, {"k": ARCHIVE_K}))
    if "LiteratureSearch" not in disabled:
        options.append(("LiteratureSearch", 0.1 * lit, {"query": " ".join(p.get("topics", []))}))
    if not p.get("memory_queried"):
        options.append(("QueryMemory", 0.1, {"k": MEMORY_K}))
    options.append(("RunAnalysis", 1.0, None))
    weights = np.array([o[1] for o in options])
    u = rng.random() * weights.sum()
    idx = min(int(np.searchsorted(np.cumsum(weights), u, side="right")), len(options) - 1)
    kind, _, args = options[idx]
    if kind == "RunAnalysis":
        args = {"approach": list(sample_proposal(persona, anchor, rng).coords)}
    return {"tool": kind, "args": args}


def _bucket_label(c: float) -> str:
    return f"{min(int(c * 10), 9) / 10:.1f}"


def write_report_rule(p: dict) -> dict:
    coords = p["approach"]
    value = p["value"]
    region = ", ".join(f"x{j}~{_bucket_label(c)}" for j, c in enumerate(coords))
    point = ", ".join(f"{c:.3f}" for c in coords)
    title = f"Significance of approaches near {region}"
    abstract = (
        f"We analyse the approach at ({point}) in region {region}. "
        f"Repeated analyses give a best measured significance of {value:.4f}."
    )
    refs = [
        f"- [Internal Archive] {{'paper_id': '{c['paper_id']}', 'agent_id': '{c['agent_id']}', 'title': '{c['title']}'}}"
        for c in p.get("citations", [])
    ]
    body = {
        "Title": title,
        "Research Question": f"How significant are approaches in region {region}?",
        "Hypothesis and Key Findings": f"The approach at ({point}) is significant (measured {value:.4f}).",
        "Rationale/Mechanism": "Measurements concentrate where nearby analyses also scored well.",
        "Empirical Evidence": f"- {p.get('n_analyses', 0)} analyses run; best value {value:.4f}.",
        "Literature Evidence": f"- {len(refs)} related archive papers retrieved.",
        "Assumptions": "- Measurement noise is zero-mean.",
        "Limitations": "- Single best measurement; nearby optima may be missed.",
        "References": "\n".join(refs) if refs else "- none",
    }
    report = "\n\n".join(f"# {h}\n{body[h]}" for h in REPORT_SECTIONS)
    return {"title": title, "abstract": abstract, "report_text": report}


# -- the session loop --------------------------------------------------------


def compose_output(
    agent: AgentState,
    best: tuple[Approach, float],
    citations: list[dict],
    collabs: list[str],
    trace: list[str],
    *,
    round_: int,
    output_id: str,
    code_log: str = "",
    backend=None,
    n_analyses: Optional[int] = None,
    embedding: Optional[list] = None,
    trace_steps: Optional[list] = None,
) -> ResearchOutput:
    approach, value = best
    payload = {
        "approach": list(approach.coords),
        "value": float(value),
        "citations": citations,
        "n_analyses": trace.count("RunAnalysis") if n_analyses is None else n_analyses,
        "n_collaborators": len(collabs),
    }
    if backend is None:
        text = write_report_rule(payload)
    else:
        from .backend import BackendRequest

        try:
            text = backend.handle(BackendRequest("WriteReport", payload, f"report:{output_id}")).payload
        except BackendUnavailable:
            text = write_report_rule(payload)
    return ResearchOutput(
        output_id=output_id,
        round=round_,
        primary_agent_id=agent.agent_id,
        collab_agent_ids=list(collabs),
        approach=approach,
        claimed_value=float(value),
        title=text["title"],
        abstract=text["abstract"],
        report_text=text["report_text"],
        code_log=code_log,
        citations=[c["paper_id"] for c in citations],
        tool_trace=list(trace),
        embedding=list(embedding) if embedding is not None else [],
        trace_steps=list(trace_steps or []),
    )


def _digest(obj) -> str:
    return sha256_hex(canonical_json(obj))[:16]


def run_session(
    agent: AgentState,
    view: StoreView,
    landscape: Landscape,
    perception: PerceptionParams,
    budget: SessionBudget,
    rng: np.random.Generator,
    message_bus: MessageBus,
    backend=None,
    *,
    independent: bool = False,
    sigma_meas: float = SIGMA_MEAS,
    output_id: Optional[str] = None,
) -> ResearchOutput:
    from .backend import BackendRequest, SimulationBackend

    backend = backend or SimulationBackend()

    def embed(coords) -> list:
        req = BackendRequest("Embed", {"coords": list(coords)}, f"embed:{output_id}:{len(trace)}")
        return backend.handle(req).payload["embedding"]
    round_ = view.round
    aid = agent.agent_id
    output_id = output_id or make_output_id(0, round_, aid)
    dim = landscape.dim

    if independent:
        own = [m.approach.coords for m in agent.private_memory if m.accepted]
        history = np.array(own, dtype=float) if own else np.empty((0, dim))
    else:
        history = view.history_array(dim)
    perceiver = Perceiver(agent.belief, history, perception)
    disabled = list(NETWORK_TOOLS) if independent else []

    measurements: list[tuple[Approach, float]] = []
    trace: list[str] = []
    trace_steps: list[tuple[int, str, str]] = []
    code_lines: list[str] = []
    collabs: list[str] = []
    channel: Optional[Channel] = None
    collab_state = "declined" if independent else "undecided"
    candidates: list[dict] = []
    archive_queried = memory_queried = False

    def measure(x: Approach, consume: bool) -> float:
        y = run_analysis(x, landscape, rng, sigma_meas, budget if consume else None)
        update_belief(agent, (x, y, round_))
        measurements.append((x, y))
        code_lines.append(f"run_analysis(approach=[{', '.join(f'{c:.6f}' for c in x.coords)}]) -> {y:.6f}")
        return y

    # the anchor only moves when the belief grows
    anchor_at = (-1, None)
    for step in range(budget.max_steps):
        if budget.remaining <= 0:
            break
        if anchor_at[0] != len(agent.belief):
            anchor_at = (len(agent.belief), belief_anchor(agent, perceiver))
        anchor = anchor_at[1]
        payload = {
            "agent_id": aid,
            "round": round_,
            "step": step,
            "max_steps": budget.max_steps,
            "persona": agent.persona.as_dict(),
            "topics": list(agent.expertise.topic_tags),
            "anchor": list(anchor.coords),
            "n_measurements": len(measurements),
            "collab_state": collab_state,
            "collab_candidates": candidates if collab_state == "searching" else [],
            "archive_queried": archive_queried,
            "memory_queried": memory_queried,
            "disabled_tools": disabled,
            "seed": int(rng.integers(0, 2**63 - 1)),
        }
        try:
            resp = backend.handle(BackendRequest("PlanStep", payload, f"plan:{output_id}:{step}")).payload
        except BackendUnavailable:
            budget.used += 1
            trace_steps.append((step, "Skipped", ""))
            continue
        kind, args = resp["tool"], dict(resp.get("args") or {})
        call = ToolCall(kind, args)
        n_before = len(measurements)
        if kind == "RunAnalysis":
            measure(Approach(tuple(args["approach"])), consume=True)
        else:
            budget.consume()
        trace.append(kind)
        trace_steps.append((step, kind, _digest({"tool": kind, "args": call.payload})))

        if collab_state == "undecided" and n_before > 0 and kind != "QueryRegistry":
            collab_state = "declined"

        if kind == "WriteReport":
            if not measurements:
                x = Approach(tuple(args.get("approach") or anchor.coords))
                measure(x, consume=False)
            break
        if kind == "QueryArchive":
            archive_queried = True
            if not independent:
                q = embed(anchor.coords)
                for paper in view.query_archive(q, int(args.get("k", ARCHIVE_K))):
                    if paper.paper_id in agent.absorbed_papers:
                        continue
                    agent.absorbed_papers.add(paper.paper_id)
                    update_belief(agent, (Approach(view.approaches[paper.paper_id]), view.claimed_values[paper.paper_id], round_))
        elif kind == "QueryRegistry":
            if independent:
                collab_state = "declined"
            else:
                q = embed((measurements[-1][0] if measurements else anchor).coords)
                hits = view.query_registry(q, int(args.get("k", REGISTRY_K)), exclude_ids={aid})
                candidates = [
                    {"agent_id": h.agent_id, "weight": view.attention.get((aid, h.agent_id), 0.0) + PARTNER_SMOOTHING}
                    for h in hits
                ]
                if collab_state == "undecided":
                    collab_state = "searching" if candidates else "declined"
        elif kind == "EstablishCollaboration":
            target = args.get("collaborator_id")
            if independent or channel is not None or target == aid or target not in view.profiles:
                collab_state = "declined" if channel is None else collab_state
            else:
                channel = establish_collaboration(aid, target, view, message_bus)
                proposal = measurements[-1][0] if measurements else anchor
                advisory = channel.ask(proposal)
                code_lines.append(f"advice from collaborator at current proposal -> {advisory:.6f}")
                collabs.append(target)
                collab_state = "established"
        elif kind == "Communicate":
            if channel is not None:
                advisory = channel.ask(Approach(tuple(args.get("approach") or anchor.coords)))
                code_lines.append(f"advice from collaborator at anchor -> {advisory:.6f}")
            collab_state = "done" if channel is not None else collab_state
        elif kind == "QueryMemory":
            memory_queried = True
        # LiteratureSearch is a stub with no results.

    if not measurements:
        measure(belief_anchor(agent, perceiver), consume=False)
    best = max(measurements, key=lambda m: m[1])
    report_approach = best[0]

    citations = []
    if not independent:
        for paper in view.query_archive(embed(report_approach.coords), CITATIONS_PER_OUTPUT):
            citations.append({"paper_id": paper.paper_id, "agent_id": paper.primary_agent_id, "title": paper.title})

    emb = embed(report_approach.coords)
    output = compose_output(
        agent,
        best,
        citations,
        collabs,
        trace,
        round_=round_,
        output_id=output_id,
        code_log="\n".join(code_lines),
        backend=backend,
        n_analyses=len(measurements),
        embedding=emb,
        trace_steps=trace_steps,
    )
    agent.current_approach = report_approach
    agent.private_memory.append(MemoryEntry(round_, report_approach, best[1], False, output_id))
    return output
