"""Binary neural network layers, reference ops and training."""
from .model import (ACT_NONE, ACT_RANDOMIZED, ACT_SC, ACT_SIGN, CONV2D, DENSE, BinLayer,
                    BnnModel, BnParams)
from .ops import (BnnError, distribute_threshold, expected_activation, fold_bn,
                  fold_threshold_value, grad_activation_erf, grad_weights_ste, hardtanh,
                  lr_schedule, randomized_activation, recu_clamp, sign_binarize, tau_schedule)
