"""Residual closures: training data, extreme learning machine and NARX network."""
from .dataset import DERIVATIVES, DatasetError, ResidualDataset, build_residual_dataset, time_derivative
from .elm import ElmModel, elm_predict, elm_train, least_squares_weights
from .narx import (MinMax, NarxConfig, NarxModel, NarxTrainingError, block_split, narx_predict,
                   narx_train)

__all__ = [
    "DERIVATIVES", "DatasetError", "ResidualDataset", "build_residual_dataset", "time_derivative",
    "ElmModel", "elm_predict", "elm_train", "least_squares_weights",
    "MinMax", "NarxConfig", "NarxModel", "NarxTrainingError", "block_split", "narx_predict", "narx_train",
]
