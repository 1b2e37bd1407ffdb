import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from statechef.labeling import LabelProposal, ProposalStore
from statechef.manifest import SampleRecord, save_manifest, DatasetManifest
from statechef.server import create_app


def make_store(tmp_path, n=4):
    store = ProposalStore(tmp_path / "store")
    proposals = []
    for i in range(n):
        image = tmp_path / f"img{i}.npy"
        np.save(image, np.zeros((4, 4, 3), dtype=np.uint8))
        record = SampleRecord(id=f"s{i}", uri=str(image), object="tomato", state="whole")
        proposals.append(
            LabelProposal(
                sample_id=f"s{i}",
                proposed=(("whole", 0.7), ("sliced", 0.2), ("diced", 0.1)),
                model_ref="stub",
                record=record,
            )
        )
    store.add_proposals(proposals)
    return store


@pytest.fixture
def client(tmp_path, taxonomy):
    store = make_store(tmp_path)

    def proposer(manifest_path, k):
        # trivial proposer used by the background-job test
        from statechef.manifest import load_manifest

        manifest = load_manifest(manifest_path)
        return [
            LabelProposal(
                sample_id=r.id,
                proposed=(("whole", 1.0),),
                model_ref="bg",
                record=r,
            )
            for r in manifest.records
        ]

    app = create_app(store, taxonomy, proposer=proposer, image_root=tmp_path)
    with TestClient(app) as test_client:
        test_client.store = store
        yield test_client


def make_session(client):
    return client.post("/sessions", json={"reviewer": "alex"}).json()


class TestTaxonomyEndpoint:
    def test_classes_and_objects(self, client):
        doc = client.get("/taxonomy").json()
        assert doc["classes"][0] == "whole"
        assert doc["classes"][-1] == "other"
        assert len(doc["objects"]) == 17
        assert set(doc["objects"]["garlic"]) == {"whole", "peeled", "sliced", "grated", "creamy"}


class TestSessions:
    def test_create_and_get(self, client):
        session = make_session(client)
        assert session["version"] == 0
        assert session["reviewer"] == "alex"
        again = client.get(f"/sessions/{session['session_id']}").json()
        assert again["version"] == 0
        assert again["progress"]["pending"] == 4

    def test_unknown_session(self, client):
        assert client.get("/sessions/nope").status_code == 404

    def test_next_walks_pending(self, client):
        session = make_session(client)
        doc = client.get(f"/sessions/{session['session_id']}/next").json()
        assert doc["proposal"]["sample_id"] == "s0"
        assert doc["proposal"]["object"] == "tomato"


class TestDecisions:
    def post(self, client, session, body):
        return client.post(f"/sessions/{session['session_id']}/decisions", json=body)

    def test_accept_flow(self, client):
        session = make_session(client)
        response = self.post(
            client, session, {"proposal_id": "s0", "decision": "accept", "expected_version": 0}
        )
        assert response.status_code == 200
        doc = response.json()
        assert doc["session"]["version"] == 1
        assert doc["proposal"]["status"] == "accepted"
        assert doc["proposal"]["final_state"] == "whole"

    def test_conflict_is_409(self, client):
        session = make_session(client)
        assert self.post(client, session, {"proposal_id": "s0", "decision": "accept", "expected_version": 0}).status_code == 200
        response = self.post(client, session, {"proposal_id": "s1", "decision": "accept", "expected_version": 0})
        assert response.status_code == 409

    def test_inadmissible_override_rejected(self, client):
        session = make_session(client)
        response = self.post(
            client,
            session,
            {"proposal_id": "s0", "decision": "override", "expected_version": 0, "state": "floured"},
        )
        assert response.status_code == 400  # tomato has no floured state

    def test_admissible_override(self, client):
        session = make_session(client)
        response = self.post(
            client,
            session,
            {"proposal_id": "s0", "decision": "override", "expected_version": 0, "state": "juice"},
        )
        assert response.status_code == 200
        assert response.json()["proposal"]["final_state"] == "juice"

    def test_unknown_proposal_404(self, client):
        session = make_session(client)
        response = self.post(client, session, {"proposal_id": "zz", "decision": "accept", "expected_version": 0})
        assert response.status_code == 404


class TestExportAndImages:
    def test_export_has_kept_labels_only(self, client):
        session = make_session(client)
        sid = session["session_id"]
        client.post(f"/sessions/{sid}/decisions", json={"proposal_id": "s0", "decision": "accept", "expected_version": 0})
        client.post(f"/sessions/{sid}/decisions", json={"proposal_id": "s1", "decision": "override", "expected_version": 1, "state": "juice"})
        client.post(f"/sessions/{sid}/decisions", json={"proposal_id": "s2", "decision": "discard", "expected_version": 2})
        lines = [json.loads(l) for l in client.get("/export").text.splitlines() if l.strip()]
        assert {r["id"] for r in lines} == {"s0", "s1"}
        states = {r["id"]: r["state"] for r in lines}
        assert states == {"s0": "whole", "s1": "juice"}

    def test_image_bytes(self, client):
        response = client.get("/images/s0")
        assert response.status_code == 200
        assert len(response.content) > 0

    def test_image_unknown(self, client):
        assert client.get("/images/zzz").status_code == 404


class TestProposalJobs:
    def test_background_job(self, client, tmp_path):
        manifest_path = tmp_path / "new.jsonl"
        image = tmp_path / "newimg.npy"
        np.save(image, np.zeros((4, 4, 3), dtype=np.uint8))
        save_manifest(
            DatasetManifest(records=(SampleRecord(id="n0", uri=str(image), object="carrot", state="whole"),)),
            manifest_path,
        )
        response = client.post("/proposals", json={"manifest": str(manifest_path), "k": 1})
        assert response.status_code == 202
        job_id = response.json()["job_id"]
        for _ in range(100):
            doc = client.get(f"/jobs/{job_id}").json()
            if doc["status"] != "running":
                break
        assert doc["status"] == "done"
        assert doc["added"] == 1
        assert client.store.get_proposal("n0").status == "pending"
