"""Name -> loss lookup used by the trainer, the bench runner and the CLI."""
import math
from dataclasses import dataclass, field

import numpy as np

from . import baselines, ldr, topk
from .baselines import ConfigError

LDR_DEFAULTS = {
    "ldr_kl": {"lam": 1.0, "c": 0.1},
    "aldr_kl": {"lambda0": 1.0, "alpha": None, "c": 0.1},
    "ldr_k_kl": {"lam": 1.0, "k": 1, "c": 0.1},
    "topk_svm": {"k": 1, "c": 0.1},
}

LDR_GRIDS = {
    "ldr_kl": [{"lam": v} for v in (0.1, 1.0, 10.0)],
    "aldr_kl": [{"lambda0": v} for v in (0.1, 1.0, 10.0)],
}

# the logit rescaling f * K / ||f||_1 is only meant for the temperature losses
NORMALIZED = {"ldr_kl", "aldr_kl"}


def loss_names():
    return sorted(set(LDR_DEFAULTS) | set(baselines.FAMILIES))


def default_grid(name):
    if name in LDR_GRIDS:
        return LDR_GRIDS[name]
    return baselines.DEFAULT_GRIDS.get(name, [{}])


@dataclass
class Loss:
    """A configured loss. ``stateful`` losses carry one lambda per sample."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.name = self.name.lower()
        if self.name in LDR_DEFAULTS:
            unknown = set(self.params) - set(LDR_DEFAULTS[self.name])
            if unknown:
                raise ConfigError(f"{self.name}: unknown parameters {sorted(unknown)}")
            self.params = {**LDR_DEFAULTS[self.name], **self.params}
            for key, value in self.params.items():
                if value is None or key == "k":
                    continue
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"{self.name}: {key} must be a number")
                self.params[key] = float(value)
            self._baseline = None
            self._check_ldr()
        else:
            spec = baselines.BaselineSpec(self.name, dict(self.params))
            self.params = spec.params
            self._baseline = spec

    def _check_ldr(self):
        prm = self.params
        if prm.get("c", 0) < 0:
            raise ConfigError(f"{self.name}: margin c must be >= 0")
        if "lam" in prm and not prm["lam"] >= 0:
            raise ConfigError(f"{self.name}: lam must be >= 0")
        if self.name == "ldr_k_kl" and not prm["lam"] > 0:
            raise ConfigError("ldr_k_kl: lam must be > 0")
        if self.name == "aldr_kl":
            if not prm["lambda0"] > 0:
                raise ConfigError("aldr_kl: lambda0 must be > 0")
            if prm["alpha"] is not None and not prm["alpha"] > 0:
                raise ConfigError("aldr_kl: alpha must be > 0")

    @property
    def stateful(self):
        return self.name == "aldr_kl"

    @property
    def normalize_logits(self):
        return self.name in NORMALIZED

    @property
    def label(self):
        prm = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()) if v is not None)
        return f"{self.name}({prm})"

    def alpha_for(self, K):
        """ALDR-KL penalty weight; defaults to 2 log K / lambda0."""
        alpha = self.params["alpha"]
        return 2.0 * math.log(K) / self.params["lambda0"] if alpha is None else alpha

    def __call__(self, F, Y):
        """Stateless evaluation: ``(values, grads)`` on a batch."""
        prm = self.params
        if self._baseline is not None:
            return baselines.baseline_loss_batch(self._baseline, F, Y)
        if self.name == "ldr_kl":
            return ldr.ldr_kl_batch(F, Y, prm["lam"], prm["c"])
        if self.name == "ldr_k_kl":
            return topk.ldr_k_kl_batch(F, Y, prm["lam"], prm["k"], prm["c"])
        if self.name == "topk_svm":
            return topk.topk_svm_batch(F, Y, prm["k"], prm["c"])
        # ALDR-KL without state: solve the inner maximization over lambda exactly
        alpha = self.alpha_for(np.shape(F)[-1])
        values, _, grads = ldr.aldr_kl_exact_batch(F, Y, prm["lambda0"], alpha, prm["c"])
        return values, grads

    def step(self, F, Y, lambda_prev):
        """Stateful ALDR-KL update: ``(values, lambda_next, grads)``."""
        prm = self.params
        alpha = self.alpha_for(np.shape(F)[-1])
        return ldr.aldr_kl_step_batch(F, Y, lambda_prev, prm["lambda0"], alpha, prm["c"])


def make_loss(name, **params):
    return Loss(name, params)
