"""Federated continual learning under label, demographic and temporal shift."""

__version__ = "0.1.0"

from .data import (  # noqa: E402
    AttributeSchema,
    CsvSchema,
    Dataset,
    IngestError,
    LabelSpace,
    Record,
    SyntheticSpec,
    generate_synthetic,
    ingest_csv,
    write_csv,
)
from .experiment import (  # noqa: E402
    ConfigError,
    ResultBundle,
    RunConfig,
    emit_plotdata,
    load_config,
    parse_config,
    run_localized_benchmark,
    run_pandemic_scenario,
)
from .federation import (  # noqa: E402
    EvalMatrix,
    ExperimentResult,
    FederationConfig,
    fedavg,
    run_experiment,
    run_round,
    train,
)
from .learner import ModelSpec, ParamVector, init_model, loss_and_grad, predict, sgd_step  # noqa: E402
from .metrics import auc_macro, cohens_d, evaluate, imbalance_factor, ltr_accuracy  # noqa: E402
from .partition import (  # noqa: E402
    Benchmark,
    InfeasiblePartitionError,
    NovelDiseaseError,
    NovelDiseaseSchedule,
    PartitionPlan,
    PartitionWarning,
    build_localized_benchmark,
    build_pandemic_benchmark,
)
from .strategies import StrategyConfig  # noqa: E402

__all__ = [
    "AttributeSchema",
    "Benchmark",
    "ConfigError",
    "CsvSchema",
    "Dataset",
    "EvalMatrix",
    "ExperimentResult",
    "FederationConfig",
    "InfeasiblePartitionError",
    "IngestError",
    "LabelSpace",
    "ModelSpec",
    "NovelDiseaseError",
    "NovelDiseaseSchedule",
    "ParamVector",
    "PartitionPlan",
    "PartitionWarning",
    "Record",
    "ResultBundle",
    "RunConfig",
    "StrategyConfig",
    "SyntheticSpec",
    "auc_macro",
    "build_localized_benchmark",
    "build_pandemic_benchmark",
    "cohens_d",
    "emit_plotdata",
    "evaluate",
    "fedavg",
    "generate_synthetic",
    "imbalance_factor",
    "ingest_csv",
    "init_model",
    "load_config",
    "loss_and_grad",
    "ltr_accuracy",
    "parse_config",
    "predict",
    "run_experiment",
    "run_localized_benchmark",
    "run_pandemic_scenario",
    "run_round",
    "sgd_step",
    "train",
    "write_csv",
]
