from purebox.orchestrate.config import (
    PIPELINES,
    BlendParams,
    CorpusParams,
    EnsembleParams,
    ExperimentConfig,
    GeneratorParams,
    ModelParams,
    TargetParams,
    TrainParams,
    TransferParams,
    canonical_json,
    config_from_dict,
    digest_of,
    load_config,
    validate,
)
from purebox.orchestrate.lab import ArtifactStore, Corpus, Lab, default_home
from purebox.orchestrate.pipeline import RunRecord, agreement, eval_set_for, run_experiment, tm_to_sm_map
from purebox.orchestrate.report import emit_report, grids
