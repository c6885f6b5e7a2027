"""Continual category discovery toolkit for embedding datasets."""

from .data import (
    DataError,
    EmbeddingDataset,
    ScenarioConfig,
    StepDataset,
    build_scenario,
    generate_synthetic,
    read_emb1,
    scenario_class_map,
    write_emb1,
)
from .heads import (
    AdamWState,
    PaHyperparams,
    ProjectionHead,
    ProxyBank,
    TrainError,
    adamw_step,
    cosine_similarity,
    embed,
    embed_batch,
    pa_loss,
    train_incremental,
    train_initial,
)
from .metrics import StepReport, cluster_accuracy, hungarian, step_metrics
from .pipeline import RunConfig, SplitKnobs, SyntheticSource, run_pipeline, tuned_synthetic_config
from .pseudo import ApConfig, PseudoLabeledSet, affinity_propagation, grow_bank, label_new, label_old
from .replay import Exemplar, build_exemplar, generate_replay, kd_loss
from .split import Gmm1D, SplitDecision, fine_split, fit_gmm1d, initial_split, select_clean, train_split_net

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
