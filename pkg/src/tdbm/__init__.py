"""Temperature-based RBMs, DBNs and DBMs for binary image reconstruction."""

from tdbm.deep import StackedModel, reconstruct, train_stack
from tdbm.rbm import LayerParams, RbmModel
from tdbm.trainer import TrainConfig, train_rbm

__all__ = ["LayerParams", "RbmModel", "StackedModel", "TrainConfig", "reconstruct", "train_rbm", "train_stack"]
__version__ = "0.1.0"
