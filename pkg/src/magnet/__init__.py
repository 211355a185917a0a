"""Learning multi-agent dynamics with a shared core and agent-specific wrapper."""
from .baselines import LinearMotion, build_lstm_baseline, build_mlp_baseline
from .model import ArchConfig, MagnetModel, build_model, count_params, init_wrapper_from_pretrained
from .preprocessing import Standardizer, TVConfig, fit_standardizer, tv_differentiate
from .systems import KURAMOTO, POINT_MASS, PREDATOR_SWARM, generate_dataset, make_spec
from .training import TrainConfig, evaluate_rollout, retune_wrapper, train_single_step

__version__ = "0.1.0"
