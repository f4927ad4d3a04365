"""Attribute predictors and score normalization.

Two predictor flavours share one conv backbone: ``regression`` nets emit an
unbounded raw score, ``binary`` nets emit a probability (sigmoid of the
logit).  Normalization turns a raw score into the bounded factor entering
the energy: sigmoid-power for regression scores, plain power for
probabilities.  Inference is pure apart from a call counter used by the
evaluation-isolation tests.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from . import tensor as T
from .checkpoint import load_entries, save_entries
from .nets import KIND_CODES, PredictorNet, PredictorSpec
from .optim import Adam, DivergenceGuard
from .tensor import Tensor

SCORE_FLOOR = 1e-12  # probability floor applied before taking logs


@dataclass(frozen=True)
class NormalizationSpec:
    """How raw predictor output maps to a probability factor in [0, 1]."""

    mode: str  # 'sigmoid-power' | 'power'
    lam: float

    def __post_init__(self):
        if self.mode not in ("sigmoid-power", "power"):
            raise ValueError(f"unknown normalization mode {self.mode!r}")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")


def normalize_score(raw, spec):
    """sigmoid(raw)**lambda, or raw**lambda for raw already in [0, 1]."""
    raw = float(raw)
    if spec.mode == "sigmoid-power":
        return (1.0 / (1.0 + math.exp(-raw))) ** spec.lam
    if not 0.0 <= raw <= 1.0:
        raise T.DomainError(f"power normalization needs raw in [0,1], got {raw}")
    return raw ** spec.lam


def log_normalized_graph(raw, spec, floor=SCORE_FLOOR):
    """Graph node for log(normalized score).

    The pre-power base is floored at ``floor`` so the log stays finite for
    any raw score; flooring the post-power value instead would flatten the
    whole landscape once lambda is large (base**lambda underflows the floor
    long before the base itself does), killing the gradients the samplers
    live on.
    """
    raw = T.as_tensor(raw)
    if spec.mode == "sigmoid-power":
        base = T.sigmoid(raw)
    else:
        if np.any(raw.data < 0) or np.any(raw.data > 1):
            raise T.DomainError("power normalization needs raw in [0,1]")
        base = raw
    return spec.lam * T.log(T.clamp_min(base, floor))


class Predictor:
    """Conv backbone plus output convention for one attribute mode."""

    def __init__(self, net, mode):
        if mode not in ("regression", "binary"):
            raise ValueError(f"unknown predictor mode {mode!r}")
        self.net = net
        self.mode = mode
        self.call_count = 0

    def parameters(self):
        return self.net.parameters()

    def forward(self, image):
        """Raw score as a graph node: (1,1) for one image, (N,1) batched."""
        self.call_count += 1
        logit = self.net.forward(image)
        return T.sigmoid(logit) if self.mode == "binary" else logit

    def score(self, image):
        """Raw score(s) as plain floats; (3,H,W) -> float, batch -> (N,)."""
        out = self.forward(image)
        vals = out.data.reshape(-1)
        return float(vals[0]) if np.asarray(image).ndim == 3 else vals.copy()

    def save(self, path):
        entries = {"meta/kind": np.array([KIND_CODES["predictor-net"]]),
                   "meta/mode": np.array([1.0 if self.mode == "binary" else 0.0])}
        entries.update(self.net.to_entries("net/"))
        save_entries(path, entries)

    @classmethod
    def load(cls, path):
        entries = load_entries(path)
        mode = "binary" if entries["meta/mode"][0] else "regression"
        return cls(PredictorNet.from_entries(entries, "net/"), mode)


def score_image(image, predictor, spec=None):
    """(raw, normalized-or-None) for one image; deterministic."""
    raw = predictor.score(image)
    return raw, (normalize_score(raw, spec) if spec is not None else None)


def rank_correlation(pred, truth):
    """Spearman rank correlation; None when undefined (constant inputs)."""
    pred = np.asarray(pred, float)
    truth = np.asarray(truth, float)
    if np.all(pred == pred[0]) or np.all(truth == truth[0]):
        return None
    rho = sps.spearmanr(pred, truth).statistic
    return None if np.isnan(rho) else float(rho)


def train_predictor(images, labels, mode, spec=PredictorSpec(), iters=600,
                    batch_size=32, lr=1e-3, heldout_frac=0.2, rng=None):
    """Fit a predictor; returns (predictor, stats).

    stats carries the loss history and the held-out Spearman rank
    correlation (None when the labels are constant, e.g. degenerate data).
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if len(images) != len(labels) or len(images) == 0:
        raise ValueError("images and labels must be equal-length and nonempty")
    rng = rng if rng is not None else np.random.default_rng(0)
    n_hold = max(1, int(len(images) * heldout_frac)) if len(images) > 4 else 0
    perm = rng.permutation(len(images))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    pred = Predictor(PredictorNet(spec, rng=rng), mode)
    opt = Adam(pred.net.parameters(), lr=lr)
    guard = DivergenceGuard()
    history = []
    for _ in range(iters):
        idx = rng.choice(train_idx, size=min(batch_size, len(train_idx)), replace=False)
        x, y = images[idx], labels[idx]
        out = pred.forward(Tensor(x))
        if mode == "regression":
            loss = T.mean(T.square(out - y))
        else:
            p = T.clamp_min(out, SCORE_FLOOR)
            q = T.clamp_min(1.0 - out, SCORE_FLOOR)
            loss = -T.mean(T.log(p) * y + T.log(q) * (1.0 - y))
        opt.zero_grad()
        loss.backward()
        opt.step()
        guard.check(loss.item())
        history.append(loss.item())
    rho = None
    if n_hold:
        scores = pred.score(images[hold_idx])
        rho = rank_correlation(scores, labels[hold_idx].ravel())
    pred.call_count = 0
    return pred, {"loss": history, "heldout_spearman": rho}
