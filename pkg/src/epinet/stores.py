"""Agent registry and internal archive with exact vector-search query layers.

Mutations happen only at round barriers; sessions read immutable
:class:`StoreView` snapshots.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConflictError, IntegrityError, NotFoundError, ValidationError
from .utils import canonical_json, sha256_hex

EMBED_DIM = 32


@dataclass
class AgentProfile:
    agent_id: str
    behavior: str
    expertise: str
    expertise_topics: list[str]
    citation_count: int = 0
    num_accepted_papers: int = 0


@dataclass
class MetaReview:
    paper_id: str
    meta_review_text: str
    overall_score: float
    rank: int
    justification: str
    decision: str

    def __post_init__(self):
        if not (0.0 <= self.overall_score <= 1.0):
            raise ValidationError(f"meta score {self.overall_score} outside [0, 1]")
        if int(self.rank) < 1:
            raise ValidationError("rank must be >= 1")
        if self.decision not in ("accept", "reject"):
            raise ValidationError(f"bad decision {self.decision!r}")


@dataclass
class PaperRecord:
    paper_id: str
    primary_agent_id: str
    collab_agent_ids: list[str]
    title: str
    abstract: str
    manuscript: str
    citation_count: int
    publication_t: int
    cited_paper_ids: list[dict[str, str]]
    code_script: Optional[str] = None
    metareview: Optional[MetaReview] = None
    status: str = "accepted"

    @property
    def authors(self) -> list[str]:
        return [self.primary_agent_id, *self.collab_agent_ids]

    def cited_ids(self) -> list[str]:
        """Distinct cited paper ids in first-listed order."""
        seen: dict[str, None] = {}
        for ref in self.cited_paper_ids:
            seen.setdefault(ref["paper_id"], None)
        return list(seen)

    def to_json(self) -> dict:
        # hand-rolled: asdict() deep-copies and is the hot path for digests
        return {
            "paper_id": self.paper_id,
            "primary_agent_id": self.primary_agent_id,
            "collab_agent_ids": list(self.collab_agent_ids),
            "title": self.title,
            "abstract": self.abstract,
            "manuscript": self.manuscript,
            "citation_count": self.citation_count,
            "publication_t": self.publication_t,
            "cited_paper_ids": [dict(r) for r in self.cited_paper_ids],
            "code_script": self.code_script,
            "metareview": None if self.metareview is None else dict(vars(self.metareview)),
            "status": self.status,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "PaperRecord":
        doc = dict(doc)
        if doc.get("metareview") is not None:
            doc["metareview"] = MetaReview(**doc["metareview"])
        return cls(**doc)


def profile_from_json(doc: dict) -> AgentProfile:
    return AgentProfile(**doc)


class EmbeddingIndex:
    """Exact cosine-similarity index; ties are broken by ascending id."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim
        self._ids: list[str] = []
        self._pos: dict[str, int] = {}
        self._mat = np.zeros((0, dim))

    def __len__(self):
        return len(self._ids)

    def __contains__(self, id_):
        return id_ in self._pos

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def _check(self, vec) -> np.ndarray:
        vec = np.asarray(vec, dtype=float).ravel()
        if vec.shape[0] != self.dim:
            raise ValidationError(f"vector length {vec.shape[0]} != index dimension {self.dim}")
        return vec

    def add(self, id_: str, vec):
        vec = self._check(vec)
        if id_ in self._pos:
            raise ConflictError(f"duplicate index id {id_!r}")
        self._pos[id_] = len(self._ids)
        self._ids.append(id_)
        self._mat = np.vstack([self._mat, vec])

    def replace(self, id_: str, vec):
        if id_ not in self._pos:
            raise NotFoundError(id_)
        self._mat[self._pos[id_]] = self._check(vec)

    def vector(self, id_: str) -> np.ndarray:
        return self._mat[self._pos[id_]].copy()

    def similarities(self, query) -> np.ndarray:
        q = self._check(query)
        if not self._ids:
            return np.zeros(0)
        norms = np.linalg.norm(self._mat, axis=1) * np.linalg.norm(q)
        dots = self._mat @ q
        out = np.zeros(len(self._ids))
        ok = norms > 0
        out[ok] = dots[ok] / norms[ok]
        return out

    def query(self, query, k: int, exclude_ids: Iterable[str] = ()) -> list[str]:
        if k < 1:
            raise ValidationError("k must be >= 1")
        sims = self.similarities(query)
        excl = set(exclude_ids)
        ranked = sorted(
            (i for i in range(len(self._ids)) if self._ids[i] not in excl),
            key=lambda i: (-sims[i], self._ids[i]),
        )
        return [self._ids[i] for i in ranked[:k]]

    def copy(self) -> "EmbeddingIndex":
        out = EmbeddingIndex(self.dim)
        out._ids = list(self._ids)
        out._pos = dict(self._pos)
        out._mat = self._mat.copy()
        out._mat.setflags(write=False)
        return out


def _content_digest(round_: int, profiles: Iterable[AgentProfile], papers: Iterable[PaperRecord]) -> str:
    doc = {
        "round": round_,
        "registry": [asdict(p) for p in sorted(profiles, key=lambda p: p.agent_id)],
        "archive": [p.to_json() for p in sorted(papers, key=lambda p: p.paper_id)],
    }
    return sha256_hex(canonical_json(doc))


@dataclass(frozen=True)
class StoreView:
    """Read-only snapshot of the shared stores at a round barrier.

    Besides registry and archive it carries the round-start agent beliefs and
    attention weights, which is all a session may read about other agents.
    """

    round: int
    profiles: Mapping[str, AgentProfile]
    papers: Mapping[str, PaperRecord]
    registry_index: EmbeddingIndex
    archive_index: EmbeddingIndex
    approaches: Mapping[str, tuple]
    claimed_values: Mapping[str, float]
    acceptance_order: tuple[str, ...]
    beliefs: Mapping[str, object] = field(default_factory=dict)
    attention: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def get_profile(self, agent_id: str) -> AgentProfile:
        try:
            return self.profiles[agent_id]
        except KeyError:
            raise NotFoundError(f"unknown agent {agent_id!r}") from None

    def get_paper(self, paper_id: str) -> PaperRecord:
        try:
            return self.papers[paper_id]
        except KeyError:
            raise NotFoundError(f"unknown paper {paper_id!r}") from None

    def query_registry(self, query_vector, k: int, exclude_ids: Iterable[str] = ()) -> list[AgentProfile]:
        return [self.profiles[i] for i in self.registry_index.query(query_vector, k, exclude_ids)]

    def query_archive(self, query_vector, k: int) -> list[PaperRecord]:
        return [self.papers[i] for i in self.archive_index.query(query_vector, k)]

    def history_array(self, dim: int) -> np.ndarray:
        """Accepted approaches in acceptance order, shape (n, dim)."""
        if not self.acceptance_order:
            return np.empty((0, dim))
        return np.array([self.approaches[i] for i in self.acceptance_order], dtype=float)

    def digest(self) -> str:
        return _content_digest(self.round, self.profiles.values(), self.papers.values())


class Stores:
    def __init__(self, embed_dim: int = EMBED_DIM):
        self.embed_dim = embed_dim
        self.profiles: dict[str, AgentProfile] = {}
        self.papers: dict[str, PaperRecord] = {}
        self.approaches: dict[str, tuple] = {}
        self.claimed_values: dict[str, float] = {}
        self.acceptance_order: list[str] = []
        self.registry_index = EmbeddingIndex(embed_dim)
        self.archive_index = EmbeddingIndex(embed_dim)
        self._cited_pairs: set[tuple[str, str]] = set()
        self._credited: set[str] = set()

    # registry

    def register_agent(self, profile: AgentProfile, embedding):
        if profile.agent_id in self.profiles:
            raise ConflictError(f"agent {profile.agent_id!r} already registered")
        if profile.citation_count < 0 or profile.num_accepted_papers < 0:
            raise ValidationError("profile counters must be non-negative")
        self.registry_index.add(profile.agent_id, embedding)
        self.profiles[profile.agent_id] = copy.deepcopy(profile)

    def update_profile_expertise(self, agent_id: str, expertise: str, topics: Sequence[str], embedding):
        p = self.get_profile(agent_id)
        p.expertise = expertise
        p.expertise_topics = list(topics)
        self.registry_index.replace(agent_id, embedding)

    def get_profile(self, agent_id: str) -> AgentProfile:
        try:
            return self.profiles[agent_id]
        except KeyError:
            raise NotFoundError(f"unknown agent {agent_id!r}") from None

    def query_registry(self, query_vector, k: int, exclude_ids: Iterable[str] = ()) -> list[AgentProfile]:
        return [self.profiles[i] for i in self.registry_index.query(query_vector, k, exclude_ids)]

    # archive

    def get_paper(self, paper_id: str) -> PaperRecord:
        try:
            return self.papers[paper_id]
        except KeyError:
            raise NotFoundError(f"unknown paper {paper_id!r}") from None

    def query_archive(self, query_vector, k: int) -> list[PaperRecord]:
        return [self.papers[i] for i in self.archive_index.query(query_vector, k)]

    def archive_insert(
        self,
        record: PaperRecord,
        embedding,
        approach: Optional[Sequence[float]] = None,
        claimed_value: float = 0.0,
    ):
        if record.paper_id in self.papers:
            raise ConflictError(f"paper {record.paper_id!r} already archived")
        if record.primary_agent_id in record.collab_agent_ids:
            raise IntegrityError("primary agent listed as collaborator")
        if record.status != "accepted":
            raise IntegrityError("only accepted papers enter the archive")
        for cited in record.cited_ids():
            if cited not in self.papers:
                raise IntegrityError(f"{record.paper_id} cites unknown paper {cited!r}")
        self.archive_index.add(record.paper_id, embedding)
        self.papers[record.paper_id] = record
        self.approaches[record.paper_id] = tuple(approach) if approach is not None else ()
        self.claimed_values[record.paper_id] = float(claimed_value)
        self.acceptance_order.append(record.paper_id)

    def propagate_citations(self, new_records: Sequence[PaperRecord]):
        """Credit authors of new records and count each (citing, cited) pair once."""
        for rec in new_records:
            for cited in rec.cited_ids():
                if cited not in self.papers:
                    raise IntegrityError(f"{rec.paper_id} cites unknown paper {cited!r}")
        for rec in sorted(new_records, key=lambda r: r.paper_id):
            if rec.paper_id not in self._credited:
                self._credited.add(rec.paper_id)
                for a in rec.authors:
                    self.get_profile(a).num_accepted_papers += 1
            for cited in rec.cited_ids():
                pair = (rec.paper_id, cited)
                if pair in self._cited_pairs:
                    continue
                self._cited_pairs.add(pair)
                target = self.papers[cited]
                target.citation_count += 1
                for a in target.authors:
                    self.get_profile(a).citation_count += 1

    def history_array(self, dim: int) -> np.ndarray:
        if not self.acceptance_order:
            return np.empty((0, dim))
        return np.array([self.approaches[i] for i in self.acceptance_order], dtype=float)

    def snapshot(self, round_: int, beliefs: Optional[Mapping] = None, attention: Optional[Mapping] = None) -> StoreView:
        return StoreView(
            round=round_,
            # shallow copies suffice: after insertion only scalar counters change
            profiles=MappingProxyType({k: copy.copy(v) for k, v in self.profiles.items()}),
            papers=MappingProxyType({k: copy.copy(v) for k, v in self.papers.items()}),
            registry_index=self.registry_index.copy(),
            archive_index=self.archive_index.copy(),
            approaches=MappingProxyType(dict(self.approaches)),
            claimed_values=MappingProxyType(dict(self.claimed_values)),
            acceptance_order=tuple(self.acceptance_order),
            beliefs=MappingProxyType(dict(beliefs or {})),
            attention=MappingProxyType(dict(attention or {})),
        )

    def digest(self, round_: int) -> str:
        return _content_digest(round_, self.profiles.values(), self.papers.values())


# JSONL persistence. ``barrier`` is the index of the round whose start state
# includes the line: initial registrations use 0, end-of-round t uses t + 1.


def paper_line(record: PaperRecord, barrier: int, embedding, approach, claimed_value: float) -> dict:
    return {
        "schema": "paper/v1",
        "barrier": barrier,
        "round": record.publication_t,
        "record": record.to_json(),
        "embedding": [float(v) for v in embedding],
        "approach": [float(v) for v in approach],
        "claimed_value": float(claimed_value),
    }


def profile_line(profile: AgentProfile, barrier: int, embedding) -> dict:
    return {
        "schema": "profile/v1",
        "barrier": barrier,
        "round": barrier - 1,
        "profile": asdict(profile),
        "embedding": [float(v) for v in embedding],
    }


def replay_stores(lines: Iterable[dict], barrier: int, embed_dim: int = EMBED_DIM) -> Stores:
    """Rebuild the stores as they stood at the start of round ``barrier``.

    Within a barrier, papers are inserted and their citations propagated
    before logged profile states are applied.
    """
    by_barrier: dict[int, tuple[list, list]] = {}
    for line in lines:
        schema = line.get("schema")
        if schema not in ("paper/v1", "profile/v1") or line["barrier"] > barrier:
            continue
        papers, profiles = by_barrier.setdefault(line["barrier"], ([], []))
        (papers if schema == "paper/v1" else profiles).append(line)
    stores = Stores(embed_dim)
    for b in sorted(by_barrier):
        papers, profiles = by_barrier[b]
        for line in profiles:
            pid = line["profile"]["agent_id"]
            if pid not in stores.profiles:
                stores.register_agent(profile_from_json(line["profile"]), line["embedding"])
        new = []
        for line in sorted(papers, key=lambda l: l["record"]["paper_id"]):
            rec = PaperRecord.from_json(line["record"])
            rec.citation_count = 0
            stores.archive_insert(rec, line["embedding"], line["approach"], line["claimed_value"])
            new.append(rec)
        stores.propagate_citations(new)
        for line in profiles:
            prof = profile_from_json(line["profile"])
            stores.profiles[prof.agent_id] = prof
            stores.registry_index.replace(prof.agent_id, line["embedding"])
    return stores
