"""MLP backbone, optimizer, heads and the training loop."""

from .heads import OpenHead, cdt_logits, cdt_temperatures, knn_predict, oltr_fit_centroids, \
    oltr_reachability, open_decision
from .model import MLP, classify, encode, init_mlp, load_model, mlp_backward, mlp_forward, \
    model_from_dict, model_to_dict, predict_logits, reinit_classifier, save_model
from .optim import OptimizerState, adam_step, warmup_multiplier
from .train import SETTINGS, RegressionConfig, TrainConfig, TrainingDiverged, TrainResult, \
    TwoStage, evaluate, train
