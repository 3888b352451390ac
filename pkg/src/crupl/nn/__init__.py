from crupl.nn.layers import (BatchNorm1D, Conv1D, Dense, Flatten, MaxPool1D,
                             ReLU, Softmax)
from crupl.nn.losses import (consistency_loss, consistency_loss_grads,
                             cross_entropy_soft, cross_entropy_soft_grad)
from crupl.nn.network import Network
from crupl.nn.optim import Adam, Sgd, make_optimizer
from crupl.nn.gradcheck import GradcheckReport, gradcheck
from crupl.nn.checkpoint import FORMAT_VERSION, load_network, save_network

__all__ = [
    "BatchNorm1D", "Conv1D", "Dense", "Flatten", "MaxPool1D", "ReLU", "Softmax",
    "consistency_loss", "consistency_loss_grads",
    "cross_entropy_soft", "cross_entropy_soft_grad",
    "Network", "Adam", "Sgd", "make_optimizer",
    "GradcheckReport", "gradcheck",
    "FORMAT_VERSION", "load_network", "save_network",
]
