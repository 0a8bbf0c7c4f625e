"""NASirt: response-model-guided selection and routing over a grid of small
1-D convolutional spectral classifiers."""

from .data import (
    DataFormatError,
    FoldSplit,
    SpectralDataset,
    SyntheticSpec,
    bootstrap_runs,
    generate_synthetic,
    load_csv,
    split,
    write_csv,
)
from .irt import (
    AbilityEstimates,
    FitConfig,
    FitResult,
    ItemParameterSet,
    ResponseMatrix,
    SingularityError,
    eap_ability,
    fit_3pl,
    normalize,
    p3pl,
    true_score,
)
from .layers import ArchitectureError
from .pipeline import (
    BinAssignment,
    ModelRank,
    PipelineError,
    RunConfig,
    RunReport,
    RunResult,
    build_response_matrix,
    complexity_summary,
    consolidate,
    inject_artificials,
    majority_vote,
    route_classify,
    run_nasirt,
    select_rank,
    separate_bins,
    summarize,
)
from .zoo import (
    FULL_GRID,
    GRID_PRESETS,
    REDUCED_GRID,
    HyperParams,
    NetworkModel,
    PredictionVector,
    TrainConfig,
    TrainingError,
    benchmark_cnn,
    build,
    expand_grid,
    gradient_check,
    param_count,
    predict_dataset,
    train,
)

__version__ = "0.1.0"
