"""statechef: identify the states of cooking objects in images.

Pipeline pieces: a state taxonomy with per-object admissible states,
dataset manifests with stratified splits, a truncated residual-network
classifier with a convolutional head, staged transfer learning and
per-object fine-tuning, soft ensemble voting, top-k evaluation, and a
human-in-the-loop label review service.
"""

from .augment import AugmentationConfig, augment_view
from .manifest import (
    DatasetManifest,
    ManifestError,
    SampleRecord,
    class_stats,
    import_crawl_list,
    load_manifest,
    sample_imagenet_subset,
    save_manifest,
    stratified_split,
)
from .metrics import (
    EvaluationReport,
    confusion_matrix,
    evaluate,
    per_class_accuracy,
    render_report,
    topk_accuracy,
)
from .models import (
    BackboneSpec,
    HeadSpec,
    ModelSpecError,
    StateClassifier,
    build_model,
    gradient_check,
    load_checkpoint,
    parameter_count,
    predict,
    replace_head,
    save_checkpoint,
    snapshot_parameters,
)
from .taxonomy import (
    CLASS_NAMES,
    Taxonomy,
    TaxonomyError,
    load_canonical_taxonomy,
    load_taxonomy,
    save_taxonomy,
)
from .training import (
    Schedule,
    TrainingHistory,
    TrainingSet,
    TrainingStage,
    object_finetune_schedule,
    run_schedule,
    run_stage,
    train_object_models,
    whole_dataset_schedule,
)
from .voting import EnsembleWeights, search_weights, weighted_vote
from .labeling import (
    LabelProposal,
    LabelingError,
    ProposalStore,
    ReviewSession,
    VersionConflictError,
    export_accepted,
    propose_labels,
)

__version__ = "0.1.0"
