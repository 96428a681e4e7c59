"""Adam optimizer over named parameter arrays, with per-element clipping."""

import numpy as np

from .exceptions import ConfigError, NumericalError


class Adam:
    """Adam with bias correction; gradients are clipped elementwise to
    [-grad_clip, +grad_clip] before entering the moment estimates.

    Parameters are updated in place so the model and optimizer share the
    same arrays. The step count t is global across all parameters.
    """

    def __init__(self, params: dict, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8,
                 grad_clip: float = 5.0):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ConfigError(f"betas must lie in [0, 1): {beta1}, {beta2}")
        if grad_clip <= 0.0:
            raise ConfigError(f"grad_clip must be positive: {grad_clip}")
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.grad_clip = grad_clip
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict, lr: float):
        """One update from a {name: gradient} dict. Names without a
        gradient are left untouched; unknown names are an error."""
        unknown = set(grads) - set(self.params)
        if unknown:
            raise ConfigError(f"gradients for unknown parameters: "
                              f"{sorted(unknown)}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            if g.shape != self.params[name].shape:
                raise ConfigError(
                    f"gradient shape {g.shape} != parameter shape "
                    f"{self.params[name].shape} for '{name}'")
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for '{name}'")
            g = np.clip(g, -self.grad_clip, self.grad_clip)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
            self.params[name] -= lr * update

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state: dict):
        if set(state["m"]) != set(self.params):
            raise ConfigError("optimizer state does not match parameters")
        self.t = int(state["t"])
        self.m = {k: np.array(v, dtype=np.float64)
                  for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=np.float64)
                  for k, v in state["v"].items()}
