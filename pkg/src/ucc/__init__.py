"""Weakly supervised clustering from unique class counts.

A model is trained to predict how many distinct classes a bag of instances
contains.  Its per-instance feature extractor, pooled through kernel density
estimates, separates the classes well enough to cluster them without labels.
"""
from .bags import Bag, InstancePool, MilDataset, bags_from_pool, make_mil_dataset, sample_bag
from .cluster import ClusterAssignment, clustering_accuracy, js_divergence, kmeans, spectral
from .errors import (ContractError, EmptyBagError, FormatError, NumericError, ShapeError,
                     TrainingDiverged, UccError)
from .kde_pool import FeatureDistribution, KdeConfig, kde_backward, kde_forward, mix_distributions
from .model import (TrainConfig, TrainReport, UccModel, build_model, extract_features,
                    predict_ucc, train)
from .oracle import UccOracle, cluster_by_ucc
from .segmentation import LabeledImage, patchify, pixel_metrics, segment

__all__ = [
    "Bag", "InstancePool", "MilDataset", "bags_from_pool", "make_mil_dataset", "sample_bag",
    "ClusterAssignment", "clustering_accuracy", "js_divergence", "kmeans", "spectral",
    "ContractError", "EmptyBagError", "FormatError", "NumericError", "ShapeError",
    "TrainingDiverged", "UccError",
    "FeatureDistribution", "KdeConfig", "kde_backward", "kde_forward", "mix_distributions",
    "TrainConfig", "TrainReport", "UccModel", "build_model", "extract_features", "predict_ucc",
    "train", "UccOracle", "cluster_by_ucc",
    "LabeledImage", "patchify", "pixel_metrics", "segment",
]
