"""Pluggable agent-cognition backends.

Every request is a JSON-native ``payload`` of one of six kinds. The
simulation backend answers with the deterministic rules from ``agents``,
``session`` and ``review``; the external backend ships the request over an
HTTP-style transport and validates the answer against the kind's schema.

Wire format::

    request  {"kind": str, "request_id": str, "payload": object}
    response {"request_id": str, "payload": object}
"""
from __future__ import annotations

import functools
import json
import logging
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

import jsonschema
import numpy as np

from .errors import BackendError, BackendUnavailable
from .stores import EMBED_DIM
from .utils import pad_embedding

log = logging.getLogger(__name__)

REQUEST_KINDS = ("GeneratePersona", "PlanStep", "WriteReport", "Review", "MetaReview", "Embed")

PROMPT_DIR = Path(__file__).parent / "prompts"

_STANCE = {"type": "number", "minimum": -1, "maximum": 1}
_SCORE4 = {"type": "integer", "minimum": 1, "maximum": 4}
_COORDS = {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 1}

RESPONSE_SCHEMAS: dict[str, dict] = {
    "GeneratePersona": {
        "type": "object",
        "required": ["persona"],
        "properties": {
            "persona": {
                "type": "object",
                "required": [
                    "stance_ideas",
                    "stance_collaboration",
                    "stance_scope",
                    "stance_evaluation",
                    "stance_literature",
                    "stance_resources",
                ],
                "properties": {
                    k: _STANCE
                    for k in (
                        "stance_ideas",
                        "stance_collaboration",
                        "stance_scope",
                        "stance_evaluation",
                        "stance_literature",
                        "stance_resources",
                    )
                },
                "additionalProperties": False,
            },
            "behavior": {"type": "string"},
        },
    },
    "PlanStep": {
        "type": "object",
        "required": ["tool"],
        "properties": {
            "tool": {
                "enum": [
                    "QueryArchive",
                    "QueryRegistry",
                    "QueryMemory",
                    "LiteratureSearch",
                    "EstablishCollaboration",
                    "Communicate",
                    "RunAnalysis",
                    "WriteReport",
                ]
            },
            "args": {
                "type": "object",
                "properties": {
                    "approach": _COORDS,
                    "collaborator_id": {"type": "string"},
                    "k": {"type": "integer", "minimum": 1},
                },
            },
        },
        "allOf": [
            {
                "if": {"properties": {"tool": {"const": "RunAnalysis"}}},
                "then": {"required": ["args"], "properties": {"args": {"required": ["approach"]}}},
            },
            {
                "if": {"properties": {"tool": {"const": "EstablishCollaboration"}}},
                "then": {"required": ["args"], "properties": {"args": {"required": ["collaborator_id"]}}},
            },
        ],
    },
    "WriteReport": {
        "type": "object",
        "required": ["title", "abstract", "report_text"],
        "properties": {
            "title": {"type": "string"},
            "abstract": {"type": "string"},
            "report_text": {"type": "string"},
        },
    },
    "Review": {
        "type": "object",
        "required": ["support", "soundness", "significance", "originality", "overall", "text"],
        "properties": {
            "support": _SCORE4,
            "soundness": _SCORE4,
            "significance": _SCORE4,
            "originality": _SCORE4,
            "overall": {"type": "integer", "minimum": 1, "maximum": 5},
            "text": {"type": "string"},
        },
    },
    "MetaReview": {
        "type": "object",
        "required": ["metareviews"],
        "properties": {
            "metareviews": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["paper_id", "meta_review_text", "overall_score", "rank", "justification"],
                    "properties": {
                        "paper_id": {"type": "string"},
                        "meta_review_text": {"type": "string"},
                        "overall_score": {"type": "number", "minimum": 0, "maximum": 1},
                        "rank": {"type": "integer", "minimum": 1},
                        "justification": {"type": "string"},
                    },
                },
            }
        },
    },
    "Embed": {
        "type": "object",
        "required": ["embedding"],
        "properties": {
            "embedding": {
                "type": "array",
                "items": {"type": "number"},
                "minItems": EMBED_DIM,
                "maxItems": EMBED_DIM,
            }
        },
    },
}

REQUEST_SCHEMAS: dict[str, dict] = {
    "GeneratePersona": {"type": "object", "required": ["agent_id", "seed"]},
    "PlanStep": {
        "type": "object",
        "required": ["agent_id", "step", "max_steps", "persona", "anchor", "n_measurements", "collab_state", "seed"],
    },
    "WriteReport": {"type": "object", "required": ["approach", "value", "citations"]},
    # double-blind: the submission carries no author fields
    "Review": {
        "type": "object",
        "required": ["submission", "reviewer"],
        "properties": {
            "submission": {
                "type": "object",
                "not": {
                    "anyOf": [
                        {"required": ["primary_agent_id"]},
                        {"required": ["collab_agent_ids"]},
                        {"required": ["authors"]},
                    ]
                },
            }
        },
    },
    "MetaReview": {"type": "object", "required": ["tournament_id", "members", "reference_papers"]},
    "Embed": {"type": "object", "required": ["coords"]},
}


@dataclass
class BackendRequest:
    kind: str
    payload: dict
    request_id: str = ""

    def __post_init__(self):
        if self.kind not in REQUEST_KINDS:
            raise BackendError(f"unknown request kind {self.kind!r}")

    def to_wire(self) -> dict:
        return {"kind": self.kind, "request_id": self.request_id, "payload": self.payload}

    @classmethod
    def from_wire(cls, msg: dict) -> "BackendRequest":
        return cls(msg["kind"], msg["payload"], msg.get("request_id", ""))


@dataclass
class BackendResponse:
    kind: str
    payload: dict = field(default_factory=dict)
    request_id: str = ""

    def to_wire(self) -> dict:
        return {"request_id": self.request_id, "payload": self.payload}


_REQUEST_VALIDATORS = {k: jsonschema.Draft202012Validator(v) for k, v in REQUEST_SCHEMAS.items()}
_RESPONSE_VALIDATORS = {k: jsonschema.Draft202012Validator(v) for k, v in RESPONSE_SCHEMAS.items()}


def _check(validator, doc, what: str):
    err = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if err is not None:
        raise BackendError(f"{what} violates schema: {err.message}")


def validate_request(req: BackendRequest):
    _check(_REQUEST_VALIDATORS[req.kind], req.payload, f"{req.kind} request")


def validate_response(kind: str, payload: dict):
    _check(_RESPONSE_VALIDATORS[kind], payload, f"{kind} response")


class Backend(Protocol):
    def handle(self, request: BackendRequest) -> BackendResponse: ...


def embed(coords) -> list[float]:
    """Simulation embedding: coordinates zero-padded to the index width."""
    return pad_embedding(coords, EMBED_DIM).tolist()


def persona_rule(p: dict) -> dict:
    from .agents import sample_persona

    persona = sample_persona(np.random.default_rng(p["seed"]))
    return {"persona": persona.as_dict(), "behavior": persona.describe()}


class SimulationBackend:
    """Deterministic rule-based cognition; pure in the request payload."""

    def handle(self, request: BackendRequest) -> BackendResponse:
        from .review import metareview_rule, review_rule
        from .session import plan_step_rule, write_report_rule

        p = request.payload
        kind = request.kind
        if kind == "GeneratePersona":
            out = persona_rule(p)
        elif kind == "PlanStep":
            out = plan_step_rule(p)
        elif kind == "WriteReport":
            out = write_report_rule(p)
        elif kind == "Review":
            out = review_rule(p)
        elif kind == "MetaReview":
            out = metareview_rule(p)
        elif kind == "Embed":
            out = {"embedding": embed(p["coords"])}
        else:  # pragma: no cover - guarded by BackendRequest
            raise BackendError(f"unknown request kind {kind!r}")
        return BackendResponse(kind, out, request.request_id)


Transport = Callable[[dict, str, float], dict]


def http_transport(message: dict, endpoint: str, timeout: float) -> dict:
    import httpx

    r = httpx.post(endpoint, json=message, timeout=timeout)
    r.raise_for_status()
    return r.json()


class ExternalBackend:
    """Sends each request to ``endpoint`` and validates the reply.

    Transport failures are retried up to ``retries`` times before raising
    :class:`BackendUnavailable`; schema violations raise :class:`BackendError`
    immediately.
    """

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        transport: Optional[Transport] = None,
        retries: int = 3,
        event_log: Optional[list] = None,
        with_prompts: bool = True,
    ):
        self.with_prompts = with_prompts
        self.endpoint = endpoint
        self.timeout = timeout
        self.transport = transport or http_transport
        self.retries = retries
        self.event_log = event_log if event_log is not None else []

    def handle(self, request: BackendRequest) -> BackendResponse:
        validate_request(request)
        message = json.loads(json.dumps(request.to_wire()))
        if self.with_prompts:
            prompt = render_prompt(request.kind, request.payload)
            if prompt is not None:
                message["payload"]["prompt"] = prompt
        last_exc: Optional[Exception] = None
        for attempt in range(self.retries):
            try:
                reply = self.transport(message, self.endpoint, self.timeout)
                break
            except Exception as e:  # network errors and timeouts of any transport
                last_exc = e
                log.warning("backend %s attempt %d failed: %s", request.kind, attempt + 1, e)
        else:
            self.event_log.append({"request_id": request.request_id, "kind": request.kind, "error": "unavailable"})
            raise BackendUnavailable(f"{request.kind} failed after {self.retries} attempts: {last_exc}")
        if not isinstance(reply, dict) or reply.get("request_id") != request.request_id:
            self.event_log.append({"request_id": request.request_id, "kind": request.kind, "error": "correlation"})
            raise BackendError(f"response does not correlate with request {request.request_id!r}")
        payload = reply.get("payload")
        try:
            validate_response(request.kind, payload)
        except BackendError as e:
            self.event_log.append({"request_id": request.request_id, "kind": request.kind, "error": str(e)})
            raise
        return BackendResponse(request.kind, payload, request.request_id)


class SimulationTransport:
    """Transport that answers wire messages with a simulation backend.

    Used as a mock external endpoint: every message is round-tripped through
    JSON text, as it would be over the network.
    """

    def __init__(self, backend: Optional[SimulationBackend] = None):
        self.backend = backend or SimulationBackend()
        self.calls = 0

    def __call__(self, message: dict, endpoint: str, timeout: float) -> dict:
        self.calls += 1
        req = BackendRequest.from_wire(json.loads(json.dumps(message)))
        resp = self.backend.handle(req)
        return json.loads(json.dumps(resp.to_wire()))


PROMPT_FILES = {
    "GeneratePersona": "generate_persona",
    "PlanStep": "plan_step",
    "WriteReport": "write_report",
    "Review": "review",
    "MetaReview": "metareview",
}


@functools.lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    """Editable prompt template shipped for external mode."""
    return (PROMPT_DIR / f"{name}.txt").read_text()


def render_prompt(kind: str, payload: dict) -> Optional[str]:
    """Fill the kind's template from the payload; ``None`` for Embed."""
    name = PROMPT_FILES.get(kind)
    if name is None:
        return None
    values = {k: v if isinstance(v, str) else json.dumps(v, indent=1, sort_keys=True) for k, v in payload.items()}
    if kind == "PlanStep":
        from .agents import Persona

        values["persona"] = Persona(**payload["persona"]).describe()
    return string.Template(load_prompt(name)).safe_substitute(values)
