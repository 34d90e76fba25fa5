"""Nearest-neighbour proportional myocontrol.

Linear-envelope features, parameterized kNN classification, rest
thresholding with linear proportionality scaling, and DSM/LVQ3 prototype
reduction, plus block-wise cross-validation and latency benchmarking.
"""

__version__ = "0.1.0"

from .classifier import (KnnConfig, KnnModel, classify, classify_1nn, classify_many,
                         distance, inverse_covariance, k_nearest, regress)
from .dataset import (REST, StreamTrial, SynthConfig, TrainingSet, load_csv, magnitude,
                      normalize, save_csv, synthesize)
from .envelope import design_butterworth, envelope_block, envelope_stream
from .errors import (ConfigurationError, ModelFitError, MyoError, NumericalError, ParseError,
                     StructuralError)
from .evaluation import SweepGrid, bench_latency, logo_cv, sweep, tat_replay
from .proportional import Prediction, ProportionalModel, fit_proportional, predict_proportional
from .reduction import PrototypeSet, ReductionConfig, reduce
