"""Learning the style-space density with a Wasserstein GAN + gradient penalty.

Styles are encoded as (mu, log sigma) vectors, normalized feature-wise over
the corpus; the generator is trained in that normalized space and samples are
de-normalized (and the sigma half exponentiated) on the way out.

The penalty term needs the critic's input gradient as a differentiable
quantity.  Since the critic is a plain relu MLP, that gradient has a closed
per-layer form which ``Mlp.input_gradient`` re-expresses as a forward
computation over the weight matrices, keeping the engine first-order.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nets import (Mlp, StyleGenerator, StyleVector, build_generator,
                   default_critic_spec, default_generator_spec, encode_style)
from .optim import Adam, TrainingDivergedError
from .tensor import Tensor


class IngestionError(RuntimeError):
    """A style item could not be turned into a corpus vector."""


@dataclass
class GanConfig:
    batch_size: int = 32
    iterations: int = 20000
    critic_steps: int = 5
    penalty_weight: float = 10.0
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    z_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if self.penalty_weight < 0:
            raise ValueError("penalty weight must be nonnegative")


@dataclass
class StyleCorpus:
    """Normalized training vectors plus the statistics to invert them."""

    vectors: np.ndarray      # (K, D) normalized
    mean: np.ndarray         # (D,)
    scale: np.ndarray        # (D,)
    channels: int | None = None  # set when D == 2 * channels style space

    @classmethod
    def from_raw(cls, raw, channels=None):
        """Normalize raw (K, D) vectors feature-wise; unit scale if degenerate."""
        raw = np.asarray(raw, dtype=np.float64)
        mean = raw.mean(axis=0)
        scale = raw.std(axis=0)
        scale = np.where(scale < 1e-12, 1.0, scale)
        return cls((raw - mean) / scale, mean, scale, channels)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def denormalize(self, vecs):
        return np.asarray(vecs) * self.scale + self.mean

    def to_entries(self, prefix=""):
        return {
            prefix + "vectors": self.vectors,
            prefix + "mean": self.mean,
            prefix + "scale": self.scale,
            prefix + "channels": np.array([float(self.channels or 0)]),
        }

    @classmethod
    def from_entries(cls, entries, prefix=""):
        ch = int(entries[prefix + "channels"][0])
        return cls(
            entries[prefix + "vectors"].copy(),
            entries[prefix + "mean"].copy(),
            entries[prefix + "scale"].copy(),
            ch if ch else None,
        )


def build_corpus(style_images, encoder):
    """Encode style images into a normalized (mu, log sigma) corpus."""
    if len(style_images) == 0:
        raise IngestionError("no style images given")
    raws = []
    for i, img in enumerate(style_images):
        try:
            arr = np.asarray(img, dtype=np.float64)
            sv = encode_style(arr, encoder)
        except Exception as exc:
            raise IngestionError(f"style item {i} could not be ingested: {exc}") from exc
        raws.append(np.concatenate([sv.mu, np.log(sv.sigma)]))
    channels = raws[0].shape[0] // 2
    return StyleCorpus.from_raw(np.stack(raws), channels=channels)


def gradient_penalty(critic, x_hat):
    """Mean squared distance of the critic's input-gradient norm from 1."""
    g = critic.input_gradient(np.asarray(x_hat, dtype=np.float64))
    sq = T.tensor_sum(T.square(g), axis=1)
    norm = T.sqrt(T.clamp_min(sq, 1e-24))
    return T.mean(T.square(norm - 1.0))


def train_wgan_gp(corpus, cfg, generator=None, critic=None):
    """Adversarial training over the normalized corpus.

    Returns (generator, critic, history); history tracks the critic loss and
    the Wasserstein estimate E[D(real)] - E[D(fake)] per generator step.
    Generators/critics passed in are trained in place; fresh defaults are
    built otherwise.
    """
    rng = np.random.default_rng(cfg.seed)
    dim = corpus.dim
    if generator is None:
        generator = Mlp(cfg.z_dim, default_generator_spec(dim), rng=rng)
    if critic is None:
        critic = Mlp(dim, default_critic_spec(), rng=rng)
    if len(corpus.vectors) < cfg.batch_size:
        raise ValueError("corpus smaller than one batch")
    opt_c = Adam(critic.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    opt_g = Adam(generator.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    history = {"critic_loss": [], "wasserstein": [], "penalty": []}

    def real_batch():
        idx = rng.choice(len(corpus.vectors), size=cfg.batch_size, replace=False)
        return corpus.vectors[idx]

    def fake_batch():
        z = rng.standard_normal((cfg.batch_size, cfg.z_dim))
        return generator.forward(Tensor(z))

    for it in range(cfg.iterations):
        w_est = pen_val = closs = 0.0
        for _ in range(cfg.critic_steps):
            real = real_batch()
            fake = fake_batch().data  # constant for the critic step
            u = rng.uniform(size=(cfg.batch_size, 1))
            x_hat = u * real + (1.0 - u) * fake
            d_real = T.mean(critic.forward(Tensor(real)))
            d_fake = T.mean(critic.forward(Tensor(fake)))
            loss = d_fake - d_real
            if cfg.penalty_weight > 0:
                pen = gradient_penalty(critic, x_hat)
                loss = loss + cfg.penalty_weight * pen
                pen_val = pen.item()
            closs = loss.item()
            w_est = d_real.item() - d_fake.item()
            if not np.isfinite(closs):
                raise TrainingDivergedError(f"critic loss non-finite at iteration {it}", step=it)
            opt_c.zero_grad()
            opt_g.zero_grad()
            loss.backward()
            opt_c.step()
        fake = fake_batch()
        g_loss = -T.mean(critic.forward(fake))
        if not np.isfinite(g_loss.item()):
            raise TrainingDivergedError(f"generator loss non-finite at iteration {it}", step=it)
        opt_c.zero_grad()
        opt_g.zero_grad()
        g_loss.backward()
        opt_g.step()
        history["critic_loss"].append(closs)
        history["wasserstein"].append(w_est)
        history["penalty"].append(pen_val)
    return generator, critic, history


def train_style_gan(corpus, cfg, rng_init=None):
    """Train on a style corpus and wrap the result as a StyleGenerator."""
    if corpus.channels is None:
        raise ValueError("corpus does not carry a style channel count")
    gen, critic, history = train_wgan_gp(corpus, cfg)
    style_gen = StyleGenerator(gen, cfg.z_dim, corpus.channels,
                               norm_mean=corpus.mean, norm_scale=corpus.scale)
    return style_gen, critic, history


def sample_vectors(generator, corpus, n, seed):
    """n de-normalized corpus-space vectors from z ~ N(0, I)."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, generator.in_dim))
    return corpus.denormalize(generator.forward(Tensor(z)).data)


def sample_styles(style_gen, n, seed):
    """n style vectors from the trained generator, deterministic under seed."""
    rng = np.random.default_rng(seed)
    return style_gen.sample(n, rng)
