"""HTTP facade over the labeling store for review clients.

Endpoints: GET /taxonomy, POST /proposals (background job), session
management, compare-and-set decisions, manifest export, and image bytes.
Proposal generation runs in a worker thread and never blocks review reads.
"""

from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import urlparse

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, PlainTextResponse
from pydantic import BaseModel

from .labeling import (
    LabelingError,
    LabelProposal,
    ProposalStore,
    VersionConflictError,
    export_accepted,
)
from .manifest import DatasetManifest
from .taxonomy import Taxonomy

__all__ = ["create_app"]

# proposer(manifest_path, k) -> list of LabelProposal
Proposer = Callable[[str, int], list]


class ProposalRequest(BaseModel):
    manifest: str
    k: int = 3


class SessionRequest(BaseModel):
    reviewer: str = "anonymous"


class DecisionRequest(BaseModel):
    proposal_id: str
    decision: str
    expected_version: int
    state: Optional[str] = None


def _proposal_json(proposal: LabelProposal) -> dict:
    doc = proposal.to_json()
    if proposal.record is not None:
        doc["object"] = proposal.record.object
        doc["uri"] = proposal.record.uri
    return doc


def _session_json(store: ProposalStore, session_id: str) -> dict:
    session = store.get_session(session_id)
    return {
        "session_id": session.session_id,
        "reviewer": session.reviewer,
        "version": session.version,
        "cursor": session.cursor,
        "progress": store.status_counts(),
    }


def create_app(
    store: ProposalStore,
    taxonomy: Taxonomy,
    proposer: Proposer | None = None,
    image_root: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="statechef labeling service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    jobs: dict[str, dict] = {}

    @app.get("/taxonomy")
    def get_taxonomy():
        return {
            "classes": taxonomy.class_names(),
            "objects": {
                o.name: sorted(o.admissible_states, key=taxonomy.class_index)
                for o in taxonomy.objects
            },
            "version": taxonomy.version,
        }

    @app.post("/proposals", status_code=202)
    def post_proposals(request: ProposalRequest):
        if proposer is None:
            raise HTTPException(status_code=503, detail="no proposer configured on this server")
        job_id = uuid.uuid4().hex[:12]
        jobs[job_id] = {"status": "running", "added": 0, "error": None}

        def work():
            try:
                proposals = proposer(request.manifest, request.k)
                jobs[job_id]["added"] = store.add_proposals(proposals)
                jobs[job_id]["status"] = "done"
            except Exception as exc:
                jobs[job_id]["status"] = "failed"
                jobs[job_id]["error"] = str(exc)

        threading.Thread(target=work, daemon=True).start()
        return {"job_id": job_id}

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        if job_id not in jobs:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        return {"job_id": job_id, **jobs[job_id]}

    @app.post("/sessions")
    def post_session(request: SessionRequest):
        session = store.create_session(request.reviewer)
        return _session_json(store, session.session_id)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        try:
            return _session_json(store, session_id)
        except LabelingError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/sessions/{session_id}/next")
    def get_next(session_id: str):
        try:
            proposal = store.next_pending(session_id)
        except LabelingError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "proposal": _proposal_json(proposal) if proposal else None,
            "session": _session_json(store, session_id),
        }

    @app.post("/sessions/{session_id}/decisions")
    def post_decision(session_id: str, request: DecisionRequest):
        if request.decision == "override" and request.state is not None:
            try:
                proposal = store.get_proposal(request.proposal_id)
            except LabelingError as exc:
                raise HTTPException(status_code=404, detail=str(exc))
            if proposal.record is not None and request.state != "other":
                admissible = taxonomy.admissible_states(proposal.record.object)
                if request.state not in admissible:
                    raise HTTPException(
                        status_code=400,
                        detail=f"state {request.state!r} is not admissible for "
                        f"object {proposal.record.object!r}",
                    )
        try:
            session = store.decide(
                session_id,
                request.proposal_id,
                request.decision,
                request.expected_version,
                state=request.state,
            )
        except VersionConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except LabelingError as exc:
            status = 404 if "unknown" in str(exc) else 400
            raise HTTPException(status_code=status, detail=str(exc))
        return {
            "session": _session_json(store, session.session_id),
            "proposal": _proposal_json(store.get_proposal(request.proposal_id)),
        }

    @app.get("/export")
    def get_export(status: str = "accepted"):
        if status == "accepted":
            manifest = export_accepted(store)
        else:
            try:
                proposals = store.proposals(status=status)
            except LabelingError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            manifest = DatasetManifest(
                records=tuple(p.record for p in proposals if p.record is not None)
            )
        lines = "".join(json.dumps(r.to_json(), sort_keys=True) + "\n" for r in manifest.records)
        return PlainTextResponse(lines, media_type="application/x-ndjson")

    @app.get("/images/{sample_id}")
    def get_image(sample_id: str):
        try:
            proposal = store.get_proposal(sample_id)
        except LabelingError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if proposal.record is None:
            raise HTTPException(status_code=404, detail=f"no image recorded for {sample_id!r}")
        uri = proposal.record.uri
        parsed = urlparse(uri)
        path = Path(parsed.path) if parsed.scheme == "file" else Path(uri)
        if image_root is not None and not path.is_absolute():
            path = Path(image_root) / path
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"image file missing: {path}")
        return FileResponse(path)

    return app
