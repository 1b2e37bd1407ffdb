import numpy as np
import pytest

from statechef.labeling import (
    LabelingError,
    LabelProposal,
    ProposalStore,
    VersionConflictError,
    export_accepted,
    propose_labels,
)
from statechef.manifest import DatasetManifest, SampleRecord, load_manifest, save_manifest
from statechef.taxonomy import CLASS_NAMES


class RiggedPredictor:
    """Predicts a fixed, strictly decreasing distribution over 11 classes."""

    def __init__(self, peak=0):
        self.peak = peak

    def predict(self, batch):
        base = np.linspace(0.3, 0.01, 11)
        base = np.roll(base / base.sum(), self.peak)
        return np.tile(base, (len(batch), 1))


def write_images(tmp_path, n):
    records = []
    for i in range(n):
        path = tmp_path / f"img{i}.npy"
        np.save(path, np.full((8, 8, 3), i % 251, dtype=np.uint8))
        records.append(
            SampleRecord(id=f"s{i:03d}", uri=str(path), object="tomato", state="whole")
        )
    return DatasetManifest(records=tuple(records))


@pytest.fixture
def store_with_proposals(tmp_path):
    manifest = write_images(tmp_path, 5)
    proposals, skipped = propose_labels(RiggedPredictor(), manifest, 3, CLASS_NAMES, model_ref="rig")
    assert not skipped
    store = ProposalStore(tmp_path / "store")
    store.add_proposals(proposals)
    return store


class TestProposalGeneration:
    def test_topk_sorted(self, tmp_path):
        manifest = write_images(tmp_path, 2)
        proposals, _ = propose_labels(RiggedPredictor(peak=3), manifest, 3, CLASS_NAMES)
        for proposal in proposals:
            probs = [p for _, p in proposal.proposed]
            assert len(probs) == 3
            assert probs == sorted(probs, reverse=True)
            assert proposal.status == "pending"
            assert proposal.proposed[0][0] == CLASS_NAMES[3]

    def test_k1_is_argmax(self, tmp_path):
        manifest = write_images(tmp_path, 1)
        proposals, _ = propose_labels(RiggedPredictor(peak=7), manifest, 1, CLASS_NAMES)
        assert len(proposals[0].proposed) == 1
        assert proposals[0].proposed[0][0] == CLASS_NAMES[7]

    def test_k_exceeding_classes(self, tmp_path):
        manifest = write_images(tmp_path, 1)
        with pytest.raises(LabelingError, match="class count"):
            propose_labels(RiggedPredictor(), manifest, 12, CLASS_NAMES)

    def test_unreadable_skipped_and_reported(self, tmp_path):
        manifest = write_images(tmp_path, 3)
        broken = SampleRecord(id="broken", uri=str(tmp_path / "missing.npy"), object="tomato", state="whole")
        manifest = DatasetManifest(records=manifest.records + (broken,))
        proposals, skipped = propose_labels(RiggedPredictor(), manifest, 2, CLASS_NAMES)
        assert len(proposals) == 3
        assert len(skipped) == 1 and skipped[0][0] == "broken"

    def test_non_monotone_probs_rejected(self):
        with pytest.raises(LabelingError, match="non-increasing"):
            LabelProposal(sample_id="x", proposed=(("whole", 0.1), ("sliced", 0.5)), model_ref="m")


class TestDecisions:
    def test_accept_sets_top_state(self, store_with_proposals):
        store = store_with_proposals
        session = store.create_session("rev")
        store.decide(session.session_id, "s000", "accept", 0)
        proposal = store.get_proposal("s000")
        assert proposal.status == "accepted"
        assert proposal.final_state == proposal.proposed[0][0]

    def test_override(self, store_with_proposals):
        store = store_with_proposals
        session = store.create_session("rev")
        top = store.get_proposal("s001").proposed[0][0]
        other_state = next(c for c in CLASS_NAMES if c != top)
        store.decide(session.session_id, "s001", "override", 0, state=other_state)
        proposal = store.get_proposal("s001")
        assert proposal.status == "overridden"
        assert proposal.final_state == other_state

    def test_override_equal_to_top_rejected(self, store_with_proposals):
        store = store_with_proposals
        session = store.create_session("rev")
        top = store.get_proposal("s001").proposed[0][0]
        with pytest.raises(LabelingError, match="use accept"):
            store.decide(session.session_id, "s001", "override", 0, state=top)

    def test_version_conflict_changes_nothing(self, store_with_proposals):
        store = store_with_proposals
        session = store.create_session("rev")
        store.decide(session.session_id, "s000", "accept", 0)
        with pytest.raises(VersionConflictError):
            store.decide(session.session_id, "s001", "accept", 0)
        assert store.get_proposal("s001").status == "pending"
        assert store.get_session(session.session_id).version == 1

    def test_version_counts_up_by_one(self, store_with_proposals):
        store = store_with_proposals
        session = store.create_session("rev")
        for i, sid in enumerate(["s000", "s001", "s002"]):
            session = store.decide(session.session_id, sid, "accept", i)
            assert session.version == i + 1
        assert store.audit_length(session.session_id) == session.version

    def test_decide_non_pending_rejected(self, store_with_proposals):
        store = store_with_proposals
        session = store.create_session("rev")
        store.decide(session.session_id, "s000", "discard", 0)
        with pytest.raises(LabelingError, match="not pending"):
            store.decide(session.session_id, "s000", "accept", 1)

    def test_revert_returns_to_pending(self, store_with_proposals):
        store = store_with_proposals
        session = store.create_session("rev")
        store.decide(session.session_id, "s000", "accept", 0)
        store.decide(session.session_id, "s000", "revert", 1)
        assert store.get_proposal("s000").status == "pending"
        assert store.get_session(session.session_id).version == 2
        with pytest.raises(LabelingError, match="already pending"):
            store.decide(session.session_id, "s000", "revert", 2)

    def test_unknown_ids(self, store_with_proposals):
        store = store_with_proposals
        session = store.create_session("rev")
        with pytest.raises(LabelingError, match="unknown proposal"):
            store.decide(session.session_id, "nope", "accept", 0)
        with pytest.raises(LabelingError, match="unknown session"):
            store.decide("nope", "s000", "accept", 0)

    def test_next_pending_in_order(self, store_with_proposals):
        store = store_with_proposals
        session = store.create_session("rev")
        assert store.next_pending(session.session_id).sample_id == "s000"
        store.decide(session.session_id, "s000", "accept", 0)
        assert store.next_pending(session.session_id).sample_id == "s001"

    def test_duplicate_proposals_rejected(self, store_with_proposals):
        store = store_with_proposals
        with pytest.raises(LabelingError, match="duplicate"):
            store.add_proposals([store.get_proposal("s000")])


class TestDurability:
    def make_decided_store(self, tmp_path):
        manifest = write_images(tmp_path, 6)
        proposals, _ = propose_labels(RiggedPredictor(), manifest, 2, CLASS_NAMES)
        store = ProposalStore(tmp_path / "store")
        store.add_proposals(proposals)
        session = store.create_session("rev")
        sid = session.session_id
        store.decide(sid, "s000", "accept", 0)
        top = store.get_proposal("s001").proposed[0][0]
        other_state = next(c for c in CLASS_NAMES if c != top)
        store.decide(sid, "s001", "override", 1, state=other_state)
        store.decide(sid, "s002", "discard", 2)
        store.decide(sid, "s003", "accept", 3)
        store.decide(sid, "s003", "revert", 4)
        return store, sid

    def state_of(self, store):
        return (
            [p.to_json() for p in store.proposals()],
            {sid: store.get_session(sid).version for sid in store._sessions},
        )

    def test_restart_replays_identically(self, tmp_path):
        store, sid = self.make_decided_store(tmp_path)
        reopened = ProposalStore(store.root)
        assert self.state_of(reopened) == self.state_of(store)
        assert reopened.get_session(sid).version == 5

    def test_snapshot_plus_tail_replay(self, tmp_path):
        store, sid = self.make_decided_store(tmp_path)
        store.compact()
        store.decide(sid, "s004", "accept", 5)
        reopened = ProposalStore(store.root)
        assert self.state_of(reopened) == self.state_of(store)

    def test_decisions_survive_even_without_compaction(self, tmp_path):
        store, sid = self.make_decided_store(tmp_path)
        assert store.audit_length() == 5


class TestExport:
    def test_empty(self, tmp_path):
        assert len(export_accepted(ProposalStore(tmp_path / "s"))) == 0

    def test_counts(self, store_with_proposals):
        store = store_with_proposals
        session = store.create_session("rev")
        sid = session.session_id
        store.decide(sid, "s000", "accept", 0)
        store.decide(sid, "s001", "accept", 1)
        store.decide(sid, "s002", "accept", 2)
        store.decide(sid, "s003", "discard", 3)
        store.decide(sid, "s004", "discard", 4)
        manifest = export_accepted(store)
        assert len(manifest) == 3
        assert {r.id for r in manifest.records} == {"s000", "s001", "s002"}

    def test_statuses_and_final_states(self, store_with_proposals):
        store = store_with_proposals
        session = store.create_session("rev")
        sid = session.session_id
        top = store.get_proposal("s000").proposed[0][0]
        other_state = next(c for c in CLASS_NAMES if c != top)
        store.decide(sid, "s000", "override", 0, state=other_state)
        store.decide(sid, "s001", "accept", 1)
        manifest = export_accepted(store)
        states = {r.id: r.state for r in manifest.records}
        assert states == {"s000": other_state, "s001": top}

    def test_roundtrip_preserves_fields(self, store_with_proposals, tmp_path):
        store = store_with_proposals
        session = store.create_session("rev")
        store.decide(session.session_id, "s000", "accept", 0)
        manifest = export_accepted(store)
        path = save_manifest(manifest, tmp_path / "exported.jsonl")
        assert load_manifest(path).records == manifest.records
