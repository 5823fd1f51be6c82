"""Agent state, personas, beliefs and the stochastic research policy."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ValidationError
from .landscape import Approach
from .utils import derive_rng, derive_seed, sq_dists

STANCES = ("ideas", "collaboration", "scope", "evaluation", "literature", "resources")

# (negative pole, positive pole) for each stance
_POLES = {
    "ideas": ("refine and extend existing ideas", "generate brand new ideas"),
    "collaboration": ("work independently", "seek out collaborators"),
    "scope": ("dig deep into one problem", "explore broadly"),
    "evaluation": ("scrutinise critically", "engage constructively"),
    "literature": ("trust intuition over prior work", "lean on the existing literature"),
    "resources": ("stay lean and minimal", "use resources to the full"),
}

ANCHOR_CANDIDATES = 20
EXPERTISE_WINDOW = 5


@dataclass(frozen=True)
class Persona:
    stance_ideas: float
    stance_collaboration: float
    stance_scope: float
    stance_evaluation: float
    stance_literature: float
    stance_resources: float

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not (-1.0 <= v <= 1.0):
                raise ValidationError(f"{f.name}={v} outside [-1, 1]")
            object.__setattr__(self, f.name, v)

    def as_dict(self) -> dict:
        return {f"stance_{s}": getattr(self, f"stance_{s}") for s in STANCES}

    def describe(self) -> str:
        """Second-person bullet prose, one line per stance."""
        lines = []
        for s in STANCES:
            v = getattr(self, f"stance_{s}")
            neg, pos = _POLES[s]
            if abs(v) < 0.2:
                text = f"you balance both: {neg} / {pos}"
            else:
                strength = "strongly" if abs(v) > 0.6 else "tend to"
                text = f"you {strength} {pos if v > 0 else neg}"
            lines.append(f"- When it comes to {s}: {text} ({v:+.2f}).")
        return "\n".join(lines)


def sample_persona(rng: np.random.Generator) -> Persona:
    return Persona(*rng.uniform(-1.0, 1.0, size=len(STANCES)))


def topic_tags_for(center: Approach, n_buckets: int = 10) -> tuple[str, ...]:
    return tuple(
        f"x{j}~{min(int(c * n_buckets), n_buckets - 1) / n_buckets:.1f}"
        for j, c in enumerate(center.coords)
    )


@dataclass(frozen=True)
class Expertise:
    center: Approach
    radius: float
    topic_tags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError("expertise radius must be > 0")
        object.__setattr__(self, "topic_tags", tuple(self.topic_tags))

    def describe(self) -> str:
        return f"Specialises in the region {', '.join(self.topic_tags)} (radius {self.radius:.3f})."


class Belief:
    """Kernel-regression view of the landscape built from observations.

    Observations are append-only. Coordinates are also kept in a growing
    array so estimates stay vectorised.
    """

    def __init__(self, bandwidth: float = 0.05, dim: Optional[int] = None):
        if not bandwidth > 0:
            raise ValidationError("belief bandwidth must be > 0")
        self.bandwidth = float(bandwidth)
        self.observations: list[tuple[Approach, float, int]] = []
        self._dim = dim
        self._x = np.empty((16, dim or 1))
        self._y = np.empty(16)

    def __len__(self):
        return len(self.observations)

    def __eq__(self, other):
        if not isinstance(other, Belief):
            return NotImplemented
        return self.bandwidth == other.bandwidth and self.observations == other.observations

    def append(self, x: Approach, y: float, round_: int):
        n = len(self.observations)
        if self._dim is None:
            self._dim = x.dim
            self._x = np.empty((16, x.dim))
        if x.dim != self._dim:
            raise ValidationError("belief observation dimension mismatch")
        if n and round_ < self.observations[-1][2]:
            raise ValidationError("belief rounds must be non-decreasing")
        if n == len(self._y):
            self._x = np.concatenate([self._x, np.empty_like(self._x)])
            self._y = np.concatenate([self._y, np.empty_like(self._y)])
        self._x[n] = x.coords
        self._y[n] = y
        self.observations.append((x, float(y), int(round_)))

    @property
    def xs(self) -> np.ndarray:
        return self._x[: len(self.observations)]

    @property
    def ys(self) -> np.ndarray:
        return self._y[: len(self.observations)]

    def estimate_many(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        if not self.observations:
            return np.zeros(len(points))
        sq = sq_dists(points, self.xs)
        # shift by the row minimum so far-away probes do not underflow to 0/0
        expo = -(sq - sq.min(axis=1, keepdims=True)) / (2.0 * self.bandwidth**2)
        w = np.exp(expo)
        return (w * self.ys).sum(axis=1) / w.sum(axis=1)

    def copy(self) -> "Belief":
        b = Belief(self.bandwidth, self._dim)
        b.observations = list(self.observations)
        b._x = self._x.copy()
        b._y = self._y.copy()
        return b

    def to_json(self) -> dict:
        return {
            "bandwidth": self.bandwidth,
            "observations": [[list(x.coords), y, r] for x, y, r in self.observations],
        }


def belief_estimate(belief: Belief, x: Approach) -> float:
    if not belief.observations:
        return 0.0
    return float(belief.estimate_many(x.as_array()[None, :])[0])


@dataclass
class Reputation:
    citation_count: int = 0
    num_accepted_papers: int = 0


@dataclass
class MemoryEntry:
    round: int
    approach: Approach
    measured_value: float
    accepted: bool = False
    output_id: Optional[str] = None


@dataclass
class AgentState:
    agent_id: str
    current_approach: Approach
    persona: Persona
    expertise: Expertise
    belief: Belief
    reputation: Reputation = field(default_factory=Reputation)
    private_memory: list[MemoryEntry] = field(default_factory=list)
    # archive papers already folded into the belief
    absorbed_papers: set[str] = field(default_factory=set)

    def to_json(self) -> dict:
        return {
            "schema": "agent/v1",
            "agent_id": self.agent_id,
            "current_approach": list(self.current_approach.coords),
            "persona": self.persona.as_dict(),
            "expertise": {
                "center": list(self.expertise.center.coords),
                "radius": self.expertise.radius,
                "topic_tags": list(self.expertise.topic_tags),
            },
            "belief": self.belief.to_json(),
            "reputation": {
                "citation_count": self.reputation.citation_count,
                "num_accepted_papers": self.reputation.num_accepted_papers,
            },
            "private_memory": [
                {
                    "round": m.round,
                    "approach": list(m.approach.coords),
                    "measured_value": m.measured_value,
                    "accepted": m.accepted,
                    "output_id": m.output_id,
                }
                for m in self.private_memory
            ],
            "absorbed_papers": sorted(self.absorbed_papers),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AgentState":
        if doc.get("schema") != "agent/v1":
            raise ValidationError(f"unsupported agent schema {doc.get('schema')!r}")
        belief = Belief(doc["belief"]["bandwidth"])
        for x, y, r in doc["belief"]["observations"]:
            belief.append(Approach(tuple(x)), y, r)
        exp = doc["expertise"]
        return cls(
            agent_id=doc["agent_id"],
            current_approach=Approach(tuple(doc["current_approach"])),
            persona=Persona(**doc["persona"]),
            expertise=Expertise(Approach(tuple(exp["center"])), exp["radius"], tuple(exp["topic_tags"])),
            belief=belief,
            reputation=Reputation(**doc["reputation"]),
            private_memory=[
                MemoryEntry(m["round"], Approach(tuple(m["approach"])), m["measured_value"], m["accepted"], m["output_id"])
                for m in doc["private_memory"]
            ],
            absorbed_papers=set(doc.get("absorbed_papers", [])),
        )


def agent_ids(n: int) -> list[str]:
    width = max(3, len(str(n)))
    return [f"agent_{i:0{width}d}" for i in range(1, n + 1)]


def init_population(
    n: int,
    landscape_dim: int,
    seed: int,
    persona_fn: Optional[Callable[[str, int], Persona]] = None,
    belief_bandwidth: float = 0.05,
) -> list[AgentState]:
    """Create ``n`` agents with ids agent_001.. and seeded personas/expertise.

    ``persona_fn(agent_id, persona_seed)`` overrides how personas are drawn;
    by default they are sampled uniformly per stance from ``persona_seed``.
    """
    if n < 1:
        raise ValidationError("population size must be >= 1")
    if landscape_dim < 1:
        raise ValidationError("landscape_dim must be >= 1")
    agents = []
    for agent_id in agent_ids(n):
        persona_seed = derive_seed(seed, "persona", agent_id)
        if persona_fn is None:
            persona = sample_persona(np.random.default_rng(persona_seed))
        else:
            persona = persona_fn(agent_id, persona_seed)
        rng = derive_rng(seed, "expertise", agent_id)
        center = Approach(tuple(rng.uniform(0.0, 1.0, size=landscape_dim)))
        radius = float(rng.uniform(0.05, 0.25))
        agents.append(
            AgentState(
                agent_id=agent_id,
                current_approach=center,
                persona=persona,
                expertise=Expertise(center, radius, topic_tags_for(center)),
                belief=Belief(belief_bandwidth, landscape_dim),
            )
        )
    return agents


def belief_anchor(agent: AgentState, perceived: Callable[[Approach], float]) -> Approach:
    """Best-looking known approach under ``perceived``.

    Candidates are the agent's highest-valued observations; an empty belief
    falls back to the expertise center.
    """
    obs = agent.belief.observations
    if not obs:
        return agent.expertise.center
    ys = agent.belief.ys
    k = min(ANCHOR_CANDIDATES, len(obs))
    # stable: ties keep the earlier observation
    order = np.argsort(-ys, kind="stable")[:k]
    many = getattr(perceived, "many", None)
    if many is not None:
        vals = many(agent.belief.xs[order])
    else:
        vals = np.array([perceived(obs[i][0]) for i in order])
    # argmax returns the first maximum, matching the stable order
    return obs[order[int(np.argmax(vals))]][0]


def explore_probability(persona: Persona) -> float:
    return (1.0 + persona.stance_scope) / 2.0


def perturbation_std(persona: Persona) -> float:
    return 0.05 * (1.0 + persona.stance_ideas) / 2.0


def sample_proposal(persona: Persona, anchor: Approach, rng: np.random.Generator) -> Approach:
    """Explore uniformly or perturb ``anchor``; returns a valid approach."""
    u = rng.random()
    if u < explore_probability(persona):
        return Approach(tuple(rng.uniform(0.0, 1.0, size=anchor.dim)))
    noise = rng.normal(0.0, 1.0, size=anchor.dim) * perturbation_std(persona)
    return Approach.clamped(anchor.as_array() + noise)


def propose_next_approach(
    agent: AgentState, perceived: Callable[[Approach], float], rng: np.random.Generator
) -> Approach:
    return sample_proposal(agent.persona, belief_anchor(agent, perceived), rng)


def update_belief(agent: AgentState, observation: tuple[Approach, float, int]):
    x, y, r = observation
    agent.belief.append(x, y, r)


def update_expertise(agent: AgentState, window: Sequence, w: int = EXPERTISE_WINDOW) -> bool:
    """Re-center expertise on the mean of the last ``w`` accepted approaches.

    ``window`` holds approaches (or objects with an ``approach`` attribute).
    Returns whether expertise changed.
    """
    if w < 1:
        raise ValidationError("expertise window must be >= 1")
    items = [getattr(o, "approach", o) for o in window][-w:]
    if not items:
        return False
    center = Approach.clamped(np.mean([a.coords for a in items], axis=0))
    agent.expertise = Expertise(center, agent.expertise.radius, topic_tags_for(center))
    return True


def query_private_memory(agent: AgentState, query: Approach, k: int) -> list[MemoryEntry]:
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not agent.private_memory:
        return []
    q = query.as_array()
    keyed = [
        (float(np.sqrt(((m.approach.as_array() - q) ** 2).sum())), m.round, m.output_id or "", i)
        for i, m in enumerate(agent.private_memory)
    ]
    keyed.sort()
    return [agent.private_memory[i] for *_, i in keyed[:k]]
