"""Streaming recommendation with reservoir-enhanced sampling and a
double-wing mixture of experts."""
from .dwmoe import DwmoeModel, ModelConfig
from .evaluation import EvaluationConfig, MetricsReport, PairIndex, RankingResult, prequential_run
from .experiment import run_experiment, sweep
from .ingest import Interaction, Interactions, StreamConfig, load_dataset, parse_interactions
from .sampling import Reservoir, SamplerConfig, TrainingBatch, decayed_weights, prepare_batch
from .synthetic import BlockSpec, make_block_stream
from .train import LossReport, StreamingTrainer, TrainConfig

__version__ = "0.1.0"
