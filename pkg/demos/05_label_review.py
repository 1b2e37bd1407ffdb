"""Semi-automatic labeling: propose with a model, review, export.

Generates a small image set, trains a throwaway tiny model for a few
epochs, writes top-3 proposals into a durable store, walks a review
session (accept / override / discard), and exports the kept labels. The
same store can then be served over HTTP with:

    statechef label serve --store <dir> --port 8123

Run with: python3 demos/05_label_review.py
"""

import tempfile
from pathlib import Path

from statechef import (
    BackboneSpec,
    HeadSpec,
    build_model,
    export_accepted,
    propose_labels,
    run_stage,
)
from statechef.labeling import ProposalStore
from statechef.synthetic import abbreviated_two_phase, write_texture_dataset
from statechef.taxonomy import CLASS_NAMES, load_canonical_taxonomy
from statechef.training import TrainingSet

workdir = Path(tempfile.mkdtemp(prefix="statechef-demo-"))
print("working in", workdir)

taxonomy = load_canonical_taxonomy()
manifest = write_texture_dataset(workdir / "images", per_class=3, size=32, seed=1)
print(f"wrote {len(manifest)} labeled images")

model = build_model(BackboneSpec.tiny(), HeadSpec.tiny(), seed=0)
data = TrainingSet.from_manifest(manifest, "train", taxonomy.class_names())
stage = abbreviated_two_phase(stage1_epochs=8).stages[0]
model, _ = run_stage(model, data, stage, seed=5)

proposals, skipped = propose_labels(model, manifest, k=3, class_names=CLASS_NAMES, model_ref="demo-tiny")
print(f"model proposed labels for {len(proposals)} images ({len(skipped)} unreadable)")
top = proposals[0]
print("first proposal:", top.sample_id, [(s, round(p, 3)) for s, p in top.proposed])

store = ProposalStore(workdir / "store")
store.add_proposals(proposals)
session = store.create_session("demo-reviewer")
sid = session.session_id

# accept two, override one, discard one
for expected in range(2):
    proposal = store.next_pending(sid)
    session = store.decide(sid, proposal.sample_id, "accept", expected)
    print(f"accepted {proposal.sample_id} as {proposal.final_state}")

proposal = store.next_pending(sid)
alternative = next(c for c in CLASS_NAMES if c != proposal.proposed[0][0])
session = store.decide(sid, proposal.sample_id, "override", session.version, state=alternative)
print(f"overrode {proposal.sample_id} to {alternative}")

proposal = store.next_pending(sid)
session = store.decide(sid, proposal.sample_id, "discard", session.version)
print(f"discarded {proposal.sample_id}")

print("session version:", session.version, "| audit log length:", store.audit_length(sid))

reopened = ProposalStore(workdir / "store")
print("replay after restart matches:",
      [p.to_json() for p in reopened.proposals()] == [p.to_json() for p in store.proposals()])

exported = export_accepted(reopened)
print(f"export holds {len(exported)} kept labels:")
for record in exported.records:
    print(f"  {record.id}: {record.state}")
