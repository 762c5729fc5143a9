"""pipeclf: compile trained classifiers into match-action pipeline programs.

The toolchain: train (or ingest) a model file, compile it to a pipeline
program (tables + entries), place it under a resource profile, emulate it
bit-exactly, check it against the direct model oracle, and evaluate hybrid
small/large deployments with confidence-threshold routing.
"""

from .emulator import EquivalenceReport, Runner, check_equivalence, run_batch, run_vector
from .errors import PipeclfError
from .hybrid import (
    HybridConfig,
    HybridReport,
    confidence_calibration,
    evaluate_hybrid,
    route,
    sweep_thresholds,
)
from .mapper import (
    CompiledShape,
    EntryDiff,
    IntervalSpec,
    QuantConfig,
    apply_entry_diff,
    bin_feature,
    compile_ensemble,
    compile_kmeans,
    compile_nb,
    compile_svm,
    compile_tree,
    diff_entries,
    extract_intervals,
    quantize,
    shape_for_params,
)
from .model_ir import (
    EnsembleModel,
    FeatureSpec,
    Hyperplane,
    KMeansModel,
    LeafNode,
    NBModel,
    Prediction,
    SplitNode,
    SVMModel,
    TreeModel,
    emit_model_file,
    evaluate_direct,
    parse_model_file,
    validate_model,
)
from .pipeline import (
    GENERIC_12,
    ResourceProfile,
    ResourceReport,
    StagedProgram,
    classification_entry_bounds,
    expand_range_to_ternary,
    place_stages,
    resource_report,
)
from .program import PipelineProgram, entries_json, load_program, program_json
from .trainers import (
    Dataset,
    TrainParams,
    load_dataset,
    train_decision_tree,
    train_gaussian_nb,
    train_kmeans,
    train_random_forest,
)

__version__ = "0.1.0"
