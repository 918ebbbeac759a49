"""Estimate per-image object-detection F1 from detector outputs alone."""

from .detection import DetectionScore, MatchConfig, iou, match_image, score_dataset
from .errors import DataError, DetscoreError
from .evaluation import (SplitSpec, confusion, cross_validate, domain_classification,
                         make_folds, regression_metrics)
from .features import (FEATURE_NAMES, FeatureOptions, FeatureVector, Standardizer,
                       extract_features, fit_standardizer, heywood_circularity, transform)
from .forest import ForestModel, ForestParams, fit_forest, fit_tree, load_model, predict, save_model
from .importance import mdi_importance, permutation_importance, sweep_top_k
from .ingest import (BoundingBox, Dataset, Detection, GroundTruthObject, ImageRecord,
                     parse_dataset, read_feature_matrix, write_feature_matrix)

__version__ = "0.1.0"
