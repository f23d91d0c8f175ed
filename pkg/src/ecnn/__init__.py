"""NumPy convolutional networks for 48x48 facial-expression images.

Layers, an architecture mini-language, HOG hybrid features, SGD training,
evaluation and visualisation, all on the CPU.
"""

from .errors import (ConfigError, DataError, DivergenceError, EcnnError, ParseError,
                     ShapeError, UsageError)
from .netspec import CLASS_NAMES, DEEP, PRESETS, SHALLOW, Model, build_model, parse_arch
from .training import TRAIN_PRESETS, TrainConfig, train

__version__ = "0.1.0"
