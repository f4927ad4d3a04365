"""Feature-statistic style transfer: the alignment operator, the stylizers,
and decoder training with content + style losses.

The alignment op rescales content features channel-wise so their spatial
mean/std match the target style statistics.  It is written in the
algebraically equivalent form

    out = x * (sigma_s / sigma_x) + (mu_s - mu_x * (sigma_s / sigma_x))

so that the self-style case (style stats equal to the content's own) is a
bitwise fixed point: sigma_x / sigma_x == 1 and mu_x - mu_x * 1 == 0 exactly
in IEEE754, hence out == x bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nets import StyleVector, encode_style
from .optim import Adam, DivergenceGuard
from .tensor import Tensor


def _stat_tensor(v, batched):
    v = T.as_tensor(v)
    if batched:
        return T.reshape(v, v.shape + (1, 1))  # (N,C) -> (N,C,1,1)
    return T.reshape(v, (v.shape[0], 1, 1))  # (C,) -> (C,1,1)


def adain(content_feat, mu_s, sigma_s):
    """Align channel statistics of ``content_feat`` to (mu_s, sigma_s).

    Accepts (C,H,W) features with (C,) stats, or (N,C,H,W) with (N,C) or
    (C,) stats.  Differentiable in the features and in both stat vectors.
    """
    feat = T.as_tensor(content_feat)
    sig = sigma_s.data if isinstance(sigma_s, Tensor) else np.asarray(sigma_s)
    if np.any(sig <= 0):
        raise T.DomainError("target sigma must be strictly positive")
    batched = feat.ndim == 4
    mu_x, sigma_x = T.channel_stats(feat)
    scale = T.div(T.as_tensor(sigma_s), sigma_x)
    shift = T.as_tensor(mu_s) - mu_x * scale
    return feat * _stat_tensor(scale, batched) + _stat_tensor(shift, batched)


def reconstruct(image, encoder, decoder):
    """Plain autoencoder pass: decode(encode(image))."""
    return decoder.forward(encoder.forward(T.as_tensor(image)))


def stylize(image, style, encoder, decoder):
    """Full stylization: decode the style-aligned content features."""
    feats = encoder.forward(T.as_tensor(image))
    return decoder.forward(adain(feats, style.mu, style.sigma))


def mix_features(content_feat, target_feat, alpha):
    """alpha * content + (1 - alpha) * target, pre-decoder.

    Plain-float alpha of exactly 0.0 or 1.0 returns the corresponding operand
    unchanged (endpoint-exact).  A Tensor alpha always takes the arithmetic
    path so its gradient exists.
    """
    if not isinstance(alpha, Tensor):
        a = float(alpha)
        if a == 0.0:
            return target_feat
        if a == 1.0:
            return content_feat
        alpha = Tensor(a)
    return alpha * content_feat + (1.0 - alpha) * target_feat


def stylize_alpha(image, style, alpha, encoder, decoder):
    """Partial stylization: interpolate content and aligned features.

    alpha=1 reproduces the plain reconstruction, alpha=0 the full
    stylization.  ``style`` may be a StyleVector or a style image (which is
    encoded first).  Raises ContractError for alpha outside [0, 1]; clipping
    is the sampler's job, not this operator's.
    """
    a_val = float(alpha.data) if isinstance(alpha, Tensor) else float(alpha)
    if not 0.0 <= a_val <= 1.0:
        raise T.ContractError(f"alpha must lie in [0, 1], got {a_val}")
    if not isinstance(style, StyleVector):
        style = encode_style(style, encoder)
    feats = encoder.forward(T.as_tensor(image))
    target = adain(feats, style.mu, style.sigma)
    return decoder.forward(mix_features(feats, target, alpha))


def psnr(a, b, peak=1.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


# ---------------------------------------------------------------------------
# training


@dataclass
class TransferLossConfig:
    """Weight of the style term and which encoder stages it is measured on."""

    gamma: float = 10.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")


def _batch(rng, images, size):
    idx = rng.choice(len(images), size=min(size, len(images)), replace=False)
    return images[idx]


def train_autoencoder(images, encoder, decoder, iters=400, batch_size=32,
                      lr=1e-3, rng=None):
    """Train encoder+decoder to reconstruct; returns the loss history."""
    if len(images) == 0:
        raise ValueError("empty training set")
    rng = rng if rng is not None else np.random.default_rng(0)
    opt = Adam(encoder.parameters() + decoder.parameters(), lr=lr)
    guard = DivergenceGuard()
    history = []
    for _ in range(iters):
        x = _batch(rng, images, batch_size)
        out = reconstruct(x, encoder, decoder)
        loss = T.mean(T.square(out - x))
        opt.zero_grad()
        loss.backward()
        opt.step()
        guard.check(loss.item())
        history.append(loss.item())
    return history


def train_transfer(content_images, style_images, encoder, decoder,
                   cfg=TransferLossConfig(), iters=400, batch_size=16,
                   lr=1e-3, rng=None):
    """Train the decoder against content + style losses; encoder is frozen.

    Content loss: squared error between the re-encoded output and the
    alignment target.  Style loss: squared error of per-channel (mu, sigma)
    between the output and the style image at every encoder stage.
    """
    if len(content_images) == 0 or len(style_images) == 0:
        raise ValueError("empty training set")
    rng = rng if rng is not None else np.random.default_rng(0)
    opt = Adam(decoder.parameters(), lr=lr)
    guard = DivergenceGuard()
    history = []
    for _ in range(iters):
        xc = _batch(rng, content_images, batch_size)
        xs = _batch(rng, style_images, batch_size)
        if len(xs) < len(xc):
            xc = xc[: len(xs)]
        elif len(xc) < len(xs):
            xs = xs[: len(xc)]
        c_stages, c_feat = encoder.forward_stages(Tensor(xc))
        s_stages, s_feat = encoder.forward_stages(Tensor(xs))
        mu_s, sigma_s = T.channel_stats(s_feat)
        target = adain(c_feat, Tensor(mu_s.data), Tensor(sigma_s.data))
        target_const = Tensor(target.data)  # decoder input is constant w.r.t. its params
        out = decoder.forward(target_const)
        o_stages, o_feat = encoder.forward_stages(out)
        loss = T.mean(T.square(o_feat - target_const))
        if cfg.gamma > 0:
            style_loss = None
            for o_st, s_st in zip(o_stages, s_stages):
                mu_o, sig_o = T.channel_stats(o_st)
                mu_t, sig_t = T.channel_stats(s_st)
                term = T.mean(T.square(mu_o - Tensor(mu_t.data))) + T.mean(
                    T.square(sig_o - Tensor(sig_t.data))
                )
                style_loss = term if style_loss is None else style_loss + term
            loss = loss + cfg.gamma * style_loss
        opt.zero_grad()
        loss.backward()
        opt.step()
        guard.check(loss.item())
        history.append(loss.item())
    return history
