"""Hybrid 1-D CNN + Transformer encoder for windowed web-traffic anomaly detection."""

__version__ = "0.1.0"

from .dataset import SyntheticSpec, dataset_stats, generate_synthetic, load_corpus, load_yahoo_csv
from .evaluation import ablation_report, confusion, cross_validate, evaluate, metrics
from .model import ModelConfig, TrainConfig, WTCFormer, build_model, load_weights, predict, save_weights, train
from .windowing import SplitSpec, WindowConfig, build_corpus, split

__all__ = [
    "SyntheticSpec", "dataset_stats", "generate_synthetic", "load_corpus", "load_yahoo_csv",
    "ablation_report", "confusion", "cross_validate", "evaluate", "metrics",
    "ModelConfig", "TrainConfig", "WTCFormer", "build_model", "load_weights", "predict",
    "save_weights", "train", "SplitSpec", "WindowConfig", "build_corpus", "split",
]
