"""Online class-incremental learning with entropy-rebalanced metric learning
and a drift-corrected nearest-class-mean classifier, on a small numpy
autodiff engine."""

from .classifier import ClassMeans, build_means, evaluate, predict
from .losses import MireConfig, MsConfig, entropy_estimate, mire_loss, mire_pp_loss, ms_loss
from .memory import EpisodicMemory
from .metrics import average_accuracy, average_forgetting
from .model import Extractor, ExtractorConfig, init_parameters
from .prototypes import PrototypeTable, corrected_mean, cross_time_mi, estimator_variance
from .stream import StreamConfig, generate_synthetic, make_split_synthetic, make_stream
from .trainer import (METHODS, TrainConfig, checkpoint_load, checkpoint_save, init_state,
                      run, step)

__version__ = "0.1.0"
