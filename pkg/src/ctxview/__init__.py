"""Contextual viewpoint classification of objects in a scene.

Each object's discrete viewpoint is estimated from the 2D layout of its
neighbors with a weighted-vote relational neighbor classifier, then fused
with the detector's own response.
"""

from .scene import BBox, ObjectHypothesis, Scene, State, ViewpointBin, discretize_viewpoint, iou, match_scene
from .relations import RelationFormat, extract_relation, extract_scene_relations, featurize
from .density import Kde, RelationalModel, StatePriors, fit_relational_model, kde_eval, kde_fit
from .localclf import ScoreModel, fit_score_model, local_weight
from .relclf import ContextualResponse, vote, wvrn_aggressive, wvrn_cautious
from .fusion import (CoupledResponse, build_coupled_response, fit_prob_fusion, predict_linear, predict_prob,
                     train_linear_fusion)
from .metrics import EvalReport, avp, classify_error, confusion_matrix, evaluate, mppe, split_low_high

__version__ = "0.1.0"
