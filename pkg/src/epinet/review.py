"""Two-stage evaluation: K-reviewer panels, meta-review tournaments, acceptance.

Reviewers only ever see an author-stripped projection of an output.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .agents import AgentState, belief_estimate
from .errors import BackendError, ConfigError, IntegrityError, ValidationError
from .landscape import Approach, Landscape, PerceptionParams, novelty_of, perceived_significance
from .session import ResearchOutput
from .stores import MetaReview, PaperRecord, StoreView, Stores
from .utils import pad_embedding

BUCKET_THRESHOLDS = (0.2, 0.4, 0.7)
SOUNDNESS_THRESHOLDS = (0.05, 0.1, 0.2)
SUPPORT_TRACE_MIN = 8
REFERENCE_PAPERS = 2
META_REVIEW_WEIGHT = 0.6
META_SIGNIFICANCE_WEIGHT = 0.4
TIE_EPSILON = 1e-9


@dataclass
class Review:
    output_id: str
    reviewer_id: str
    support: int
    soundness: int
    significance: int
    originality: int
    overall: int
    text: str = ""

    def __post_init__(self):
        for name in ("support", "soundness", "significance", "originality"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and 1 <= v <= 4):
                raise ValidationError(f"{name}={v!r} outside 1..4")
        if not (isinstance(self.overall, (int, np.integer)) and 1 <= self.overall <= 5):
            raise ValidationError(f"overall={self.overall!r} outside 1..5")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Tournament:
    tournament_id: str
    member_output_ids: list[str]
    reference_paper_ids: list[str] = field(default_factory=list)


@dataclass
class EvaluationResult:
    output_id: str
    reviews: list[Review]
    meta: MetaReview
    combined_score: float
    accepted: bool = False


def bucket(value: float, thresholds: Sequence[float] = BUCKET_THRESHOLDS) -> int:
    """Map a value onto 1..4; each threshold crossed adds one."""
    return 1 + sum(value >= t for t in thresholds)


def submission_projection(output: ResearchOutput) -> dict:
    """What a reviewer may see of an output: no author identities."""
    return {
        "output_id": output.output_id,
        "title": output.title,
        "abstract": output.abstract,
        "report_text": output.report_text,
        "code_log": output.code_log,
        "approach": list(output.approach.coords),
        "claimed_value": output.claimed_value,
        "n_citations": len(output.citations),
        "trace_length": len(output.tool_trace),
    }


def _embedding(output: ResearchOutput) -> np.ndarray:
    if output.embedding:
        return np.asarray(output.embedding, dtype=float)
    return pad_embedding(output.approach.coords)


def select_reviewers(output: ResearchOutput, view: StoreView, k: int) -> list[str]:
    authors = set(output.authors)
    eligible = len([a for a in view.profiles if a not in authors])
    if eligible < k:
        raise ConfigError(f"only {eligible} eligible reviewers for {output.output_id}, need {k}")
    return view.registry_index.query(_embedding(output), k, exclude_ids=authors)


def review_rule(p: dict) -> dict:
    sub, rv = p["submission"], p["reviewer"]
    gap = abs(sub["claimed_value"] - rv["belief_estimate"])
    soundness = 4 - sum(gap >= t for t in SOUNDNESS_THRESHOLDS)
    significance = bucket(rv["perceived_significance"])
    originality = bucket(rv["novelty"])
    support = min(4, 1 + min(sub["n_citations"], 3) + (1 if sub["trace_length"] >= SUPPORT_TRACE_MIN else 0))
    scores = [support, soundness, significance, originality]
    if rv["stance_evaluation"] < -0.5:
        scores = [max(1, s - 1) for s in scores]
    overall = int(min(5, max(1, math.floor(np.mean(scores) * 1.25 + 0.5))))
    names = ("support", "soundness", "significance", "originality")
    text = "; ".join(f"{n}: {s}/4" for n, s in zip(names, scores)) + f". Overall recommendation {overall}/5."
    return {**dict(zip(names, (int(s) for s in scores))), "overall": overall, "text": text}


def review_payload(
    reviewer: AgentState,
    output: ResearchOutput,
    view: StoreView,
    landscape: Landscape,
    perception: PerceptionParams,
    history: Optional[np.ndarray] = None,
) -> dict:
    if reviewer.agent_id in output.authors:
        raise IntegrityError(f"{reviewer.agent_id} cannot review its own output")
    history = view.history_array(landscape.dim) if history is None else history
    belief = view.beliefs.get(reviewer.agent_id, reviewer.belief)
    x = output.approach
    return {
        "submission": submission_projection(output),
        "reviewer": {
            "reviewer_id": reviewer.agent_id,
            "stance_evaluation": reviewer.persona.stance_evaluation,
            "belief_estimate": belief_estimate(belief, x),
            "perceived_significance": perceived_significance(landscape, x, history, perception),
            "novelty": novelty_of(x, history, perception),
        },
    }


def score_review(
    reviewer: AgentState,
    output: ResearchOutput,
    view: StoreView,
    landscape: Landscape,
    perception: PerceptionParams,
    rng: Optional[np.random.Generator] = None,
    backend=None,
    history: Optional[np.ndarray] = None,
) -> Review:
    """Score one submission; the simulation rule is deterministic so ``rng`` is unused."""
    payload = review_payload(reviewer, output, view, landscape, perception, history)
    if backend is None:
        scores = review_rule(payload)
    else:
        from .backend import BackendRequest

        req = BackendRequest("Review", payload, f"review:{output.output_id}:{reviewer.agent_id}")
        scores = backend.handle(req).payload
    return Review(output_id=output.output_id, reviewer_id=reviewer.agent_id, **scores)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(a @ b / (na * nb)) if na > 0 and nb > 0 else 0.0


def cluster_submissions(
    outputs: Sequence[ResearchOutput],
    l: int,
    rng: np.random.Generator,
    archive_ids: Iterable[str] = (),
    round_: int = 0,
) -> list[Tournament]:
    """Greedy thematic clustering into tournaments of at most ``l`` members."""
    if l < 2:
        raise ValidationError("tournament size must be >= 2")
    by_id = {o.output_id: o for o in outputs}
    unassigned = sorted(by_id)
    archive_ids = sorted(archive_ids)
    tournaments = []
    while unassigned:
        seed_id = unassigned.pop(0)
        seed_vec = _embedding(by_id[seed_id])
        ranked = sorted(unassigned, key=lambda i: (-_cosine(seed_vec, _embedding(by_id[i])), i))
        members = [seed_id, *ranked[: l - 1]]
        for m in members[1:]:
            unassigned.remove(m)
        refs: list[str] = []
        if archive_ids:
            n_ref = min(REFERENCE_PAPERS, len(archive_ids))
            refs = [archive_ids[i] for i in rng.choice(len(archive_ids), size=n_ref, replace=False)]
        tournaments.append(Tournament(f"t{round_:03d}-{len(tournaments):02d}", members, refs))
    return tournaments


def _percentiles(values: Sequence[float]) -> list[float]:
    n = len(values)
    if n == 1:
        return [0.5]
    out = []
    for i, v in enumerate(values):
        lower = sum(1 for j, w in enumerate(values) if j != i and w < v)
        ties = sum(1 for j, w in enumerate(values) if j != i and w == v)
        out.append((lower + 0.5 * ties) / (n - 1))
    return out


def metareview_rule(p: dict) -> dict:
    members = p["members"]
    pct = _percentiles([m["perceived_significance"] for m in members])
    raws = [
        float(np.mean(m["overalls"])) / 5.0 * META_REVIEW_WEIGHT + q * META_SIGNIFICANCE_WEIGHT
        for m, q in zip(members, pct)
    ]
    order = sorted(range(len(members)), key=lambda i: (-raws[i], members[i]["output_id"]))
    out = []
    prev = None
    for rank, i in enumerate(order, start=1):
        score = raws[i] if prev is None else min(raws[i], prev - TIE_EPSILON)
        score = min(1.0, max(0.0, score))
        prev = score
        m = members[i]
        out.append(
            {
                "paper_id": m["output_id"],
                "meta_review_text": (
                    f"Mean overall {np.mean(m['overalls']):.2f}/5 across {len(m['overalls'])} reviews; "
                    f"perceived significance percentile {pct[i]:.2f} within the tournament."
                ),
                "overall_score": score,
                "rank": rank,
                "justification": f"Ranked {rank} of {len(members)} by combined review and significance evidence.",
            }
        )
    out.sort(key=lambda d: d["paper_id"])
    return {"metareviews": out}


def meta_review(
    tournament: Tournament,
    reviews: Mapping[str, Sequence[Review]],
    view: StoreView,
    outputs: Mapping[str, ResearchOutput],
    landscape: Landscape,
    perception: PerceptionParams,
    backend=None,
    k: Optional[int] = None,
    history: Optional[np.ndarray] = None,
) -> list[MetaReview]:
    """Rank a tournament; decisions start as ``reject`` until acceptance."""
    history = view.history_array(landscape.dim) if history is None else history
    members = []
    for oid in tournament.member_output_ids:
        revs = reviews.get(oid)
        if not revs or (k is not None and len(revs) != k):
            raise IntegrityError(f"missing reviews for {oid}")
        out = outputs[oid]
        members.append(
            {
                "output_id": oid,
                "title": out.title,
                "abstract": out.abstract,
                "overalls": [r.overall for r in revs],
                "perceived_significance": perceived_significance(landscape, out.approach, history, perception),
            }
        )
    refs = [
        {"paper_id": pid, "title": view.papers[pid].title, "abstract": view.papers[pid].abstract}
        for pid in tournament.reference_paper_ids
    ]
    payload = {"tournament_id": tournament.tournament_id, "members": members, "reference_papers": refs}
    if backend is None:
        result = metareview_rule(payload)
    else:
        from .backend import BackendRequest

        result = backend.handle(BackendRequest("MetaReview", payload, f"meta:{tournament.tournament_id}")).payload
    metas = result["metareviews"]
    ids = sorted(m["paper_id"] for m in metas)
    if ids != sorted(tournament.member_output_ids):
        raise BackendError(f"meta-review for {tournament.tournament_id} does not cover its members")
    if sorted(m["rank"] for m in metas) != list(range(1, len(metas) + 1)):
        raise BackendError(f"meta-review ranks for {tournament.tournament_id} are not a strict permutation")
    return [MetaReview(decision="reject", **m) for m in metas]


def accept_round(results: Sequence[EvaluationResult], n: int, k: int) -> set[str]:
    """Accept the floor(n/k) best combined scores of the whole round."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    ranked = sorted(results, key=lambda r: (-r.combined_score, r.output_id))
    accepted = {r.output_id for r in ranked[: n // k]}
    for r in results:
        r.accepted = r.output_id in accepted
        r.meta.decision = "accept" if r.accepted else "reject"
    return accepted


def to_paper_record(output: ResearchOutput, meta: Optional[MetaReview], view_or_stores) -> PaperRecord:
    refs = []
    for pid in output.citations:
        cited = view_or_stores.get_paper(pid)
        refs.append({"paper_id": pid, "agent_id": cited.primary_agent_id, "title": cited.title})
    return PaperRecord(
        paper_id=output.output_id,
        primary_agent_id=output.primary_agent_id,
        collab_agent_ids=list(output.collab_agent_ids),
        title=output.title,
        abstract=output.abstract,
        manuscript=output.report_text,
        citation_count=0,
        publication_t=output.round,
        cited_paper_ids=refs,
        code_script=output.code_log or None,
        metareview=meta,
        status="accepted",
    )


def apply_consequences(
    accepted: Sequence[ResearchOutput],
    stores: Stores,
    metas: Optional[Mapping[str, MetaReview]] = None,
) -> list[PaperRecord]:
    """Insert accepted outputs into the archive and propagate citations.

    Papers go in by ascending id. The stores' accepted history (which drives
    perceived significance) grows with each insert.
    """
    metas = metas or {}
    records = []
    for out in sorted(accepted, key=lambda o: o.output_id):
        rec = to_paper_record(out, metas.get(out.output_id), stores)
        stores.archive_insert(rec, _embedding(out), out.approach.coords, out.claimed_value)
        records.append(rec)
    stores.propagate_citations(records)
    return records
