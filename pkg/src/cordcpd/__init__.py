"""Correlation-aware change-point detection for multivariate time series.

The model couples a temporal/spatial encoder that infers a per-step
correlation matrix between variables with a correlation-conditioned
dynamics decoder. Two complementary change scores fall out: shifts in the
inferred correlation structure (s_r) and bursts of forecast error under a
frozen correlation (s_d); their normalized sum (s_en) detects both kinds,
and their difference classifies which kind occurred.

Package layout: ``autodiff``/``optim``/``rng``/``sampling`` are the
numerical substrate; ``simulator`` generates the particle-spring benchmark;
``encoder``/``decoder``/``model`` define the network; ``scoring``,
``metrics`` and ``training`` run detection and evaluation; ``dataio``,
``pamap2``, ``plotting`` and ``cli`` are the artifact and workflow surface.
"""

from .autodiff import GradTape, Tensor
from .dataio import (DatasetManifest, FormatError, LoadedSplit, SeriesRecord,
                     load_manifest, load_split, read_tensor, save_manifest,
                     write_tensor)
from .decoder import Decoder, DecoderConfig
from .encoder import Encoder, EncoderConfig
from .metrics import EvalConfig, auc_roc, classification_report, correlation_accuracy, \
    dataset_detection_metrics, tri
from .model import Model
from .pamap2 import Pamap2Config, ingest_pamap2
from .rng import Rng
from .scoring import (ChangeTypeDecision, ScoreTriple, classify_change_type,
                      predict_change_point, read_scores_csv, score_dataset,
                      write_scores_csv)
from .simulator import SimConfig, TrajectorySeries, generate_dataset, generate_series
from .training import Checkpoint, TrainConfig, fit, run_grid

__version__ = "0.1.0"

__all__ = [
    "ChangeTypeDecision", "Checkpoint", "DatasetManifest", "Decoder",
    "DecoderConfig", "Encoder", "EncoderConfig", "EvalConfig", "FormatError",
    "GradTape", "LoadedSplit", "Model", "Pamap2Config", "Rng", "ScoreTriple",
    "SeriesRecord", "SimConfig", "Tensor", "TrainConfig", "TrajectorySeries",
    "auc_roc", "classification_report", "classify_change_type",
    "correlation_accuracy", "dataset_detection_metrics", "fit",
    "generate_dataset", "generate_series", "ingest_pamap2", "load_manifest",
    "load_split", "predict_change_point", "read_scores_csv", "read_tensor",
    "run_grid", "save_manifest", "score_dataset", "tri", "write_scores_csv",
    "write_tensor",
]
