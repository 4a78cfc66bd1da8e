from ml.model_manager import ModelManager, get_model_manager
from ml.network import MLP, Adam, MlpConfig, gradient_check
from ml.training import RepeatedLocation, TrainedModel, locate_repeated, predict, train

__all__ = [
    'MLP',
    'Adam',
    'MlpConfig',
    'ModelManager',
    'RepeatedLocation',
    'TrainedModel',
    'get_model_manager',
    'gradient_check',
    'locate_repeated',
    'predict',
    'train',
]
