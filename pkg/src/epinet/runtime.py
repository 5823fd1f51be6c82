"""Round loop with barrier semantics, run logs, replay and configuration."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .agents import AgentState, Persona, Reputation, init_population, update_expertise
from .backend import BackendRequest, ExternalBackend, SimulationBackend
from .errors import ConfigError, IntegrityError, NotFoundError
from .landscape import Approach, Landscape, PerceptionParams, generate_landscape
from .network import AttentionGraph, events_from_round, graph_metrics, update_attention
from .review import (
    EvaluationResult,
    accept_round,
    apply_consequences,
    cluster_submissions,
    meta_review,
    score_review,
    select_reviewers,
)
from .session import MessageBus, ResearchOutput, SessionBudget, make_output_id, run_session
from .stores import AgentProfile, StoreView, Stores, paper_line, profile_line, replay_stores
from .utils import canonical_json, derive_rng, sha256_hex

log = logging.getLogger(__name__)

EXPERTISE_EVERY = 5
# config fields that change how a run executes but never what it computes
EXECUTION_FIELDS = ("backend", "endpoint", "timeout", "workers")


@dataclass
class LandscapeConfig:
    dim: int = 2
    n_peaks: int = 12
    seed: int = 7


@dataclass
class ExperimentConfig:
    n_agents: int = 16
    rounds: int = 40
    max_steps: int = 40
    reviewers_per_paper: int = 2
    tournament_size: int = 4
    landscape: LandscapeConfig = field(default_factory=LandscapeConfig)
    perception: PerceptionParams = field(default_factory=PerceptionParams)
    mode: str = "networked"
    backend: str = "simulation"
    endpoint: Optional[str] = None
    timeout: float = 30.0
    seed: int = 0
    workers: int = 1
    sigma_meas: float = 0.05
    belief_bandwidth: float = 0.05
    attention_decay: float = 0.1
    expertise_every: int = EXPERTISE_EVERY

    def validate(self):
        k = self.reviewers_per_paper
        if k < 1:
            raise ConfigError("reviewers_per_paper must be >= 1")
        # one collaborator at most per session, so K + 1 authors plus reviewers
        if self.n_agents <= k + 1:
            raise ConfigError(f"n_agents={self.n_agents} must exceed reviewers_per_paper + 1 = {k + 1}")
        if self.tournament_size < 2:
            raise ConfigError("tournament_size must be >= 2")
        if self.rounds < 1 or self.max_steps < 1:
            raise ConfigError("rounds and max_steps must be >= 1")
        if self.mode not in ("networked", "independent"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.backend not in ("simulation", "external"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "external" and not self.endpoint:
            raise ConfigError("external backend needs an endpoint")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.landscape.dim < 1 or self.landscape.n_peaks < 1:
            raise ConfigError("landscape needs dim >= 1 and n_peaks >= 1")
        if not 0 <= self.attention_decay < 1:
            raise ConfigError("attention_decay must lie in [0, 1)")
        return self

    def to_json(self) -> dict:
        return asdict(self)

    def semantic(self) -> dict:
        d = self.to_json()
        for k in EXECUTION_FIELDS:
            d.pop(k)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        doc = dict(doc)
        try:
            if "landscape" in doc:
                doc["landscape"] = LandscapeConfig(**doc["landscape"])
            if "perception" in doc:
                doc["perception"] = PerceptionParams(**doc["perception"])
            return cls(**doc).validate()
        except TypeError as e:
            raise ConfigError(str(e)) from None


def load_config(path) -> ExperimentConfig:
    """Read a JSON or TOML document mirroring :class:`ExperimentConfig`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    try:
        if path.suffix == ".toml":
            import tomli

            doc = tomli.loads(text)
        else:
            doc = json.loads(text)
    except Exception as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from None
    return ExperimentConfig.from_dict(doc)


# -- run log -----------------------------------------------------------------


class RunLog:
    """Ordered list of JSON records, closed by a ``digest/v1`` line."""

    def __init__(self, records: Optional[list[dict]] = None):
        self.records: list[dict] = records if records is not None else []

    def append(self, rec: dict):
        self.records.append(rec)

    def body(self) -> list[dict]:
        return [r for r in self.records if r.get("schema") != "digest/v1"]

    def compute_digest(self) -> str:
        lines = []
        for r in self.body():
            if r.get("schema") == "run/v1":
                r = {k: v for k, v in r.items() if k != "execution"}
            lines.append(canonical_json(r))
        return sha256_hex("\n".join(lines))

    def seal(self):
        self.records = self.body()
        self.records.append({"schema": "digest/v1", "digest": self.compute_digest()})

    @property
    def digest(self) -> str:
        if not self.records or self.records[-1].get("schema") != "digest/v1":
            raise IntegrityError("run log is not sealed")
        return self.records[-1]["digest"]

    def of(self, schema: str) -> list[dict]:
        return [r for r in self.records if r.get("schema") == schema]

    def write(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(canonical_json(r) + "\n")

    @classmethod
    def load(cls, path, verify: bool = True) -> "RunLog":
        records = []
        with open(path) as fh:
            for i, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError:
                    raise IntegrityError(f"{path}:{i}: unreadable log line") from None
        out = cls(records)
        if verify:
            out.verify()
        return out

    def verify(self):
        """Check the log is complete and its digest matches its content."""
        if self.digest != self.compute_digest():
            raise IntegrityError("run log digest does not match its content")

    @property
    def config(self) -> ExperimentConfig:
        head = self.of("run/v1")
        if not head:
            raise IntegrityError("run log has no run/v1 header")
        return ExperimentConfig.from_dict({**head[0]["config"], **head[0]["execution"]})


# -- backend wiring ----------------------------------------------------------


def make_backend(config: ExperimentConfig, transport=None):
    if config.backend == "simulation":
        return SimulationBackend()
    return ExternalBackend(config.endpoint, timeout=config.timeout, transport=transport)


def _profile_for(agent: AgentState) -> AgentProfile:
    return AgentProfile(
        agent_id=agent.agent_id,
        behavior=agent.persona.describe(),
        expertise=agent.expertise.describe(),
        expertise_topics=list(agent.expertise.topic_tags),
    )


@dataclass
class RunResult:
    log: RunLog
    stores: Stores
    agents: list[AgentState]
    landscape: Landscape
    attention: AttentionGraph
    # digests of the live stores at each barrier, index = barrier
    barrier_digests: list[str] = field(default_factory=list)


def run_experiment(
    config: ExperimentConfig,
    *,
    transport=None,
    backend=None,
    on_barrier: Optional[Callable[[int, Stores], None]] = None,
) -> RunResult:
    """Run ``config.rounds`` rounds and return the sealed log with final state.

    Sessions run on a pool of ``config.workers`` threads; all shared-state
    mutations happen at the barrier in sorted-id order, so the log does not
    depend on scheduling.
    """
    config.validate()
    independent = config.mode == "independent"
    backend = backend or make_backend(config, transport)
    landscape = generate_landscape(config.landscape.dim, config.landscape.n_peaks, config.landscape.seed)
    perception = config.perception
    seed = config.seed
    k, n = config.reviewers_per_paper, config.n_agents
    runlog = RunLog()

    def embed(coords, rid: str) -> list:
        return backend.handle(BackendRequest("Embed", {"coords": list(coords)}, rid)).payload["embedding"]

    def persona_fn(agent_id: str, persona_seed: int) -> Persona:
        req = BackendRequest("GeneratePersona", {"agent_id": agent_id, "seed": persona_seed}, f"persona:{agent_id}")
        return Persona(**backend.handle(req).payload["persona"])

    agents = init_population(n, landscape.dim, seed, persona_fn, config.belief_bandwidth)
    by_id = {a.agent_id: a for a in agents}
    stores = Stores()

    runlog.append(
        {
            "schema": "run/v1",
            "config": config.semantic(),
            "execution": {f: getattr(config, f) for f in EXECUTION_FIELDS},
        }
    )
    runlog.append({"schema": "landscape/v1", **landscape.to_json()})
    for a in agents:
        runlog.append({**a.to_json(), "barrier": 0})
        emb = embed(a.expertise.center.coords, f"registry:{a.agent_id}")
        prof = _profile_for(a)
        stores.register_agent(prof, emb)
        runlog.append(profile_line(prof, 0, emb))
    barrier_digests = [stores.digest(0)]
    runlog.append({"schema": "barrier/v1", "barrier": 0, "digest": barrier_digests[0]})
    if on_barrier:
        on_barrier(0, stores)

    attention = AttentionGraph(0)
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for t in range(config.rounds):
            view = stores.snapshot(t, {a.agent_id: a.belief.copy() for a in agents}, attention.weights)
            bus = MessageBus()

            def session(agent: AgentState) -> ResearchOutput:
                return run_session(
                    agent,
                    view,
                    landscape,
                    perception,
                    SessionBudget(config.max_steps),
                    derive_rng(seed, "session", t, agent.agent_id),
                    bus,
                    backend,
                    independent=independent,
                    sigma_meas=config.sigma_meas,
                    output_id=make_output_id(seed, t, agent.agent_id),
                )

            outputs = list(pool.map(session, agents)) if pool else [session(a) for a in agents]
            outputs.sort(key=lambda o: o.output_id)
            out_by_id = {o.output_id: o for o in outputs}
            for o in outputs:
                runlog.append(
                    {
                        "schema": "trace/v1",
                        "round": t,
                        "agent_id": o.primary_agent_id,
                        "output_id": o.output_id,
                        "session_length": len(o.trace_steps),
                        "steps": [list(s) for s in o.trace_steps],
                    }
                )
            for m in bus.messages():
                runlog.append({"schema": "message/v1", "round": t, **m})

            # review stage, against the round-start snapshot
            history = view.history_array(landscape.dim)
            reviews: dict[str, list] = {}
            for o in outputs:
                panel = select_reviewers(o, view, k)
                reviews[o.output_id] = [
                    score_review(by_id[r], o, view, landscape, perception, backend=backend, history=history)
                    for r in panel
                ]
            tournaments = cluster_submissions(
                outputs, config.tournament_size, derive_rng(seed, "tournament", t), view.papers.keys(), t
            )
            metas = {}
            tour_of = {}
            for tour in tournaments:
                for m in meta_review(tour, reviews, view, out_by_id, landscape, perception, backend, k, history):
                    metas[m.paper_id] = m
                    tour_of[m.paper_id] = tour.tournament_id
            results = [
                EvaluationResult(o.output_id, reviews[o.output_id], metas[o.output_id], metas[o.output_id].overall_score)
                for o in outputs
            ]
            accepted_ids = accept_round(results, len(outputs), k)

            for o in outputs:
                for r in reviews[o.output_id]:
                    runlog.append({"schema": "review/v1", "round": t, **r.to_json()})
            for tour in tournaments:
                runlog.append(
                    {
                        "schema": "tournament/v1",
                        "round": t,
                        "tournament_id": tour.tournament_id,
                        "member_output_ids": tour.member_output_ids,
                        "reference_paper_ids": tour.reference_paper_ids,
                    }
                )
            for o in outputs:
                runlog.append(
                    {
                        "schema": "metareview/v1",
                        "round": t,
                        "output_id": o.output_id,
                        "tournament_id": tour_of[o.output_id],
                        **asdict(metas[o.output_id]),
                    }
                )
                runlog.append(
                    {"schema": "output/v1", "accepted": o.output_id in accepted_ids, **o.to_json()}
                )

            # barrier: every shared mutation happens here, in sorted-id order
            accepted = [out_by_id[i] for i in sorted(accepted_ids)]
            records = apply_consequences(accepted, stores, metas)
            for o in accepted:
                for a in o.authors:
                    for mem in by_id[a].private_memory:
                        if mem.output_id == o.output_id:
                            mem.accepted = True
            for a in agents:
                p = stores.profiles[a.agent_id]
                a.reputation = Reputation(p.citation_count, p.num_accepted_papers)

            events = events_from_round(
                outputs,
                [r for o in outputs for r in reviews[o.output_id]],
                records,
                lambda pid: stores.papers[pid].primary_agent_id,
            )
            previous = attention
            attention = update_attention(attention, events, config.attention_decay)

            if (t + 1) % config.expertise_every == 0:
                for a in agents:
                    own = [
                        stores.approaches[pid]
                        for pid in stores.acceptance_order
                        if a.agent_id in stores.papers[pid].authors
                    ]
                    if update_expertise(a, [Approach(tuple(c)) for c in own]):
                        stores.update_profile_expertise(
                            a.agent_id,
                            a.expertise.describe(),
                            a.expertise.topic_tags,
                            embed(a.expertise.center.coords, f"registry:{a.agent_id}:{t}"),
                        )

            b = t + 1
            for rec, o in zip(records, accepted):
                runlog.append(paper_line(rec, b, o.embedding, o.approach.coords, o.claimed_value))
            for aid in sorted(stores.profiles):
                runlog.append(profile_line(stores.profiles[aid], b, stores.registry_index.vector(aid)))
            runlog.append(
                {
                    "schema": "network/v1",
                    **attention.to_json(),
                    "round": t,
                    "barrier": b,
                    "metrics": graph_metrics(attention, previous, sorted(by_id)),
                }
            )
            for ev in getattr(backend, "event_log", [])[:]:
                runlog.append({"schema": "backend/v1", "round": t, **ev})
            if hasattr(backend, "event_log"):
                backend.event_log.clear()
            barrier_digests.append(stores.digest(b))
            runlog.append({"schema": "barrier/v1", "barrier": b, "digest": barrier_digests[-1]})
            if on_barrier:
                on_barrier(b, stores)
    finally:
        if pool:
            pool.shutdown()

    for a in agents:
        runlog.append({**a.to_json(), "barrier": config.rounds})
    runlog.seal()
    return RunResult(runlog, stores, agents, landscape, attention, barrier_digests)


def run_ablation_independent(config: ExperimentConfig, **kw) -> RunResult:
    """Same loop with the shared stores and collaboration cut off."""
    return run_experiment(replace(config, mode="independent"), **kw)


def replay(runlog: RunLog, round_: int) -> StoreView:
    """Stores as they stood at the start of ``round_`` (barrier index).

    ``round_`` ranges over 0..T; T is the state after the final round.
    """
    barriers = [r["barrier"] for r in runlog.of("barrier/v1")]
    if round_ not in barriers:
        raise NotFoundError(f"round {round_} not in log (barriers 0..{max(barriers, default=-1)})")
    return replay_stores(runlog.records, round_).snapshot(round_)
