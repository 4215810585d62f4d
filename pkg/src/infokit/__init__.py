"""infokit: informativeness scoring, budgeted selection and migration splitting over embeddings."""

__version__ = "0.1.0"

from .errors import (
    AbsentClass,
    ChecksumMismatch,
    DimMismatch,
    DivergenceDetected,
    DuplicateId,
    EmptyDistances,
    EmptyScores,
    EmptyTable,
    InsufficientPool,
    InvariantViolation,
    MalformedHeader,
    MissingLogits,
    ToolkitError,
    UnknownId,
)
from .fixtures import MixtureSpec, make_fixture
from .iei import (
    ClassPrototypes,
    DistanceVector,
    Indicator,
    ProbabilityVector,
    ScoreTable,
    class_prototypes,
    distance_entropy_scores,
    distance_vector,
    l2_normalized,
    metric_scores,
    probability_entropy_scores,
    prototype_probabilities,
    shannon_entropy,
)
from .ood import MigrationDistances, MigrationSplit, migration_distances, migration_split, test_domain_prototypes
from .probe import (
    ProbeConfig,
    ProbeModel,
    evaluate,
    fit_linear_probe,
    fit_nearest_prototype,
    fit_probe,
    load_probe,
    predict_logits,
    save_probe,
)
from .selection import (
    BudgetScheme,
    ClassStats,
    CurveRecord,
    SelectionPlan,
    aci,
    addition_loop,
    class_budgets,
    class_distribution_stats,
    curve_auc,
    make_scorer,
    reduction_loop,
    select,
)
from .store import (
    EmbeddingTable,
    TableManifest,
    load_table,
    make_table,
    merge,
    save_table,
    subset,
    table_from_csv,
    table_to_csv,
)

__all__ = [name for name in dir() if not name.startswith("_")]
