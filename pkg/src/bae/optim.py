"""First-order adaptive-moment optimizer and a shared divergence guard."""

import numpy as np


class TrainingDivergedError(RuntimeError):
    """Loss blew up (or went non-finite) during training."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class Adam:
    """Adaptive-moment updates over a list of parameter Tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        # p -= lr * m_hat / (sqrt(v_hat) + eps), folded so the bias corrections
        # cost two scalars instead of two array passes
        lr_t = self.lr * np.sqrt(c2) / c1
        eps_t = self.eps * np.sqrt(c2)
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            denom = np.sqrt(v)
            denom += eps_t
            denom = np.divide(m, denom, out=denom)
            denom *= lr_t
            p.data -= denom

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


class DivergenceGuard:
    """Raises once the loss exceeds 10x its initial value for 100 straight steps."""

    def __init__(self, factor=10.0, patience=100):
        self.factor = factor
        self.patience = patience
        self.initial = None
        self.streak = 0
        self.steps = 0

    def check(self, loss):
        self.steps += 1
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss at step {self.steps}", step=self.steps)
        if self.initial is None:
            self.initial = max(abs(loss), 1e-12)
            return
        if loss > self.initial * self.factor:
            self.streak += 1
            if self.streak >= self.patience:
                raise TrainingDivergedError(
                    f"loss above {self.factor}x its initial value for "
                    f"{self.patience} consecutive steps (step {self.steps})",
                    step=self.steps,
                )
        else:
            self.streak = 0
