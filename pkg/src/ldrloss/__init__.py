"""Label-distributionally-robust losses and a benchmark harness for noisy labels."""
from .baselines import BaselineSpec, ConfigError, baseline_loss, symmetry_sum
from .ldr import aldr_kl_exact, aldr_kl_step, aldr_lambda_update, dw_weights, ldr_kl, shifted_scores
from .registry import Loss, loss_names, make_loss
from .topk import ldr_k_kl, omega_k_argmax, omega_k_oracle, topk_svm

__version__ = "0.1.0"
