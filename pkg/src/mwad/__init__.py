"""Two-stage window anomaly detection for multivariate time series.

Stage one reshapes each row with attention over a trailing window of rows,
stage two predicts the next reshaped row from the previous ones with an LSTM
encoder/decoder, and the prediction error is thresholded.
"""
from .dataset import EventDataset, NormalizationState, Schema, SplitSpec, load_csv, prepare, save_csv
from .errors import MwadError
from .numeric import BACKEND
from .scoring import ScoreSeries, classify, score, select_threshold, threshold_range
from .training import Detector, TrainConfig, load_checkpoint, save_checkpoint, train
from .wgat import GatParams
from .wlae import LaeModel, LstmCellParams

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Detector", "EventDataset", "GatParams", "LaeModel", "LstmCellParams", "MwadError",
    "NormalizationState", "Schema", "ScoreSeries", "SplitSpec", "TrainConfig", "classify",
    "load_checkpoint", "load_csv", "prepare", "save_checkpoint", "save_csv", "score",
    "select_threshold", "threshold_range", "train",
]
