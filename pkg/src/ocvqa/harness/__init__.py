from .config import ConfigError, RunConfig, load_config
from .training import MetricsReport, TrainingError, evaluate, train
