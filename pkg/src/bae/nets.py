"""Network definitions: style generator and critic MLPs, the conv codec
(encoder/decoder), the attribute-predictor backbone, and checkpoint I/O.

All parameters are float64 Tensors initialized with He-style uniform fan-in
scaling from a caller-supplied numpy Generator.  Networks are immutable
during inference; training mutates parameters single-threaded.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import CheckpointError, load_entries, save_entries
from .tensor import Tensor


class ConfigError(ValueError):
    """A network spec is internally inconsistent."""


def he_uniform(rng, fan_in, shape):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


# ---------------------------------------------------------------------------
# fully connected stacks


@dataclass(frozen=True)
class MlpSpec:
    """Layer output widths and per-layer activations ('relu' or 'none')."""

    widths: tuple
    activations: tuple

    def __post_init__(self):
        if len(self.widths) != len(self.activations):
            raise ConfigError("widths and activations must have equal length")
        if any(w < 1 for w in self.widths):
            raise ConfigError("layer widths must be positive")
        if any(a not in ("relu", "none") for a in self.activations):
            raise ConfigError("activations must be 'relu' or 'none'")


def default_generator_spec(out_dim):
    return MlpSpec((128, 512, out_dim), ("relu", "relu", "none"))


def default_critic_spec():
    return MlpSpec((512, 256, 128, 1), ("relu", "relu", "relu", "none"))


class Mlp:
    """Plain fully connected stack, batched input (n, in_dim)."""

    def __init__(self, in_dim, spec, rng=None, _init=True):
        self.in_dim = in_dim
        self.spec = spec
        self.weights = []
        self.biases = []
        if _init:
            rng = rng if rng is not None else np.random.default_rng(0)
            fan = in_dim
            for width in spec.widths:
                self.weights.append(Tensor(he_uniform(rng, fan, (fan, width))))
                self.biases.append(Tensor(np.zeros(width)))
                fan = width

    @property
    def out_dim(self):
        return self.spec.widths[-1]

    def parameters(self):
        return self.weights + self.biases

    def forward(self, x):
        h = T.as_tensor(x)
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise T.ShapeError(f"expected input (n, {self.in_dim}), got {h.shape}")
        for w, b, act in zip(self.weights, self.biases, self.spec.activations):
            h = T.matmul(h, w) + b
            if act == "relu":
                h = T.relu(h)
        return h

    def input_gradient(self, x):
        """d(output)/d(input) for a scalar-output stack, as a graph node.

        The backward pass through the relu masks is re-expressed as a forward
        computation: masks are constants (their derivative is zero almost
        everywhere), the weight matrices stay graph nodes, so the result is
        differentiable with respect to the parameters without second-order
        machinery.
        """
        if self.out_dim != 1:
            raise ConfigError("input_gradient requires a scalar-output stack")
        if self.spec.activations[-1] != "none":
            raise ConfigError("input_gradient requires a linear final layer")
        x = np.asarray(x, dtype=np.float64)
        masks = []
        h = x
        for w, b, act in zip(self.weights, self.biases, self.spec.activations):
            a = h @ w.data + b.data
            if act == "relu":
                masks.append((a > 0).astype(np.float64))
                h = np.maximum(a, 0.0)
            else:
                masks.append(None)
                h = a
        d = Tensor(np.ones((x.shape[0], 1)))
        for i in reversed(range(len(self.weights))):
            d = T.matmul_t(d, self.weights[i])
            if i > 0 and masks[i - 1] is not None:
                d = T.mul(d, masks[i - 1])
        return d

    def to_entries(self, prefix=""):
        entries = {
            prefix + "meta/kind": np.array([KIND_CODES["mlp"]], dtype=np.float64),
            prefix + "meta/in_dim": np.array([self.in_dim], dtype=np.float64),
            prefix + "meta/widths": np.array(self.spec.widths, dtype=np.float64),
            prefix + "meta/acts": np.array(
                [1.0 if a == "relu" else 0.0 for a in self.spec.activations]
            ),
        }
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            entries[f"{prefix}layer{i}/w"] = w.data
            entries[f"{prefix}layer{i}/b"] = b.data
        return entries

    @classmethod
    def from_entries(cls, entries, prefix=""):
        in_dim = int(entries[prefix + "meta/in_dim"][0])
        widths = tuple(int(w) for w in entries[prefix + "meta/widths"])
        acts = tuple("relu" if a else "none" for a in entries[prefix + "meta/acts"])
        net = cls(in_dim, MlpSpec(widths, acts), _init=False)
        for i, width in enumerate(widths):
            w = entries[f"{prefix}layer{i}/w"]
            b = entries[f"{prefix}layer{i}/b"]
            if w.shape[1] != width or b.shape != (width,):
                raise CheckpointError(f"layer {i} shape mismatch in checkpoint")
            net.weights.append(Tensor(w.copy()))
            net.biases.append(Tensor(b.copy()))
        return net


# ---------------------------------------------------------------------------
# style vectors and the generator wrapper


@dataclass
class StyleVector:
    """Per-channel (mu, sigma) statistics of an encoded style."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise T.ShapeError("mu and sigma must be equal-length vectors")
        if np.any(self.sigma <= 0):
            raise T.DomainError("style sigma components must be strictly positive")

    def flat(self):
        return np.concatenate([self.mu, self.sigma])


class StyleGenerator:
    """Maps latents z to style vectors: MLP output, de-normalized, sigma half
    exponentiated.  ``norm_mean``/``norm_scale`` default to the identity and
    are set from the training corpus statistics."""

    def __init__(self, mlp, z_dim, channels, norm_mean=None, norm_scale=None):
        if mlp.out_dim != 2 * channels:
            raise ConfigError(
                f"generator output width {mlp.out_dim} != 2 x {channels} channels"
            )
        if mlp.in_dim != z_dim:
            raise ConfigError(f"generator input width {mlp.in_dim} != z_dim {z_dim}")
        self.mlp = mlp
        self.z_dim = z_dim
        self.channels = channels
        self.norm_mean = np.zeros(2 * channels) if norm_mean is None else np.asarray(norm_mean, float)
        self.norm_scale = np.ones(2 * channels) if norm_scale is None else np.asarray(norm_scale, float)

    def parameters(self):
        return self.mlp.parameters()

    def style_stats_graph(self, z):
        """Graph path z -> (mu (C,), sigma (C,)); sigma strictly positive."""
        z = T.as_tensor(z)
        if z.ndim == 1:
            z = T.reshape(z, (1, self.z_dim))
        raw = T.reshape(self.mlp.forward(z), (2 * self.channels,))
        vec = raw * self.norm_scale + self.norm_mean
        mu = vec[: self.channels]
        sigma = T.exp(vec[self.channels:])
        return mu, sigma

    def style(self, z):
        mu, sigma = self.style_stats_graph(np.asarray(z, dtype=np.float64))
        return StyleVector(mu.data.copy(), sigma.data.copy())

    def sample(self, n, rng):
        return [self.style(rng.standard_normal(self.z_dim)) for _ in range(n)]

    def to_entries(self, prefix=""):
        entries = {
            prefix + "meta/kind": np.array([KIND_CODES["style-generator"]]),
            prefix + "meta/z_dim": np.array([self.z_dim], dtype=np.float64),
            prefix + "meta/channels": np.array([self.channels], dtype=np.float64),
            prefix + "norm/mean": self.norm_mean,
            prefix + "norm/scale": self.norm_scale,
        }
        entries.update(self.mlp.to_entries(prefix + "mlp/"))
        return entries

    @classmethod
    def from_entries(cls, entries, prefix=""):
        mlp = Mlp.from_entries(entries, prefix + "mlp/")
        return cls(
            mlp,
            z_dim=int(entries[prefix + "meta/z_dim"][0]),
            channels=int(entries[prefix + "meta/channels"][0]),
            norm_mean=entries[prefix + "norm/mean"].copy(),
            norm_scale=entries[prefix + "norm/scale"].copy(),
        )


def build_generator(spec, z_dim, channels, rng=None):
    """Generator over latents of size z_dim producing 2*channels style stats."""
    if spec.widths[-1] != 2 * channels:
        raise ConfigError(
            f"spec final width {spec.widths[-1]} must equal 2 x {channels} channels"
        )
    return StyleGenerator(Mlp(z_dim, spec, rng=rng), z_dim, channels)


# ---------------------------------------------------------------------------
# conv codec


@dataclass(frozen=True)
class CodecSpec:
    """Encoder conv stack; the decoder mirrors it with upsampling for pooling."""

    in_channels: int = 3
    channels: tuple = (8, 16)
    kernel: int = 3

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ConfigError("kernel size must be odd")
        if not self.channels:
            raise ConfigError("at least one conv layer required")

    @property
    def feature_channels(self):
        return self.channels[-1]


class _ConvStack:
    def __init__(self):
        self.kernels = []
        self.biases = []

    def _add_layer(self, rng, c_in, c_out, k):
        fan_in = c_in * k * k
        self.kernels.append(Tensor(he_uniform(rng, fan_in, (c_out, c_in, k, k))))
        self.biases.append(Tensor(np.zeros(c_out)))

    def parameters(self):
        return self.kernels + self.biases

    def _conv(self, x, i, activation):
        b = self.biases[i]
        h = T.conv2d(x, self.kernels[i]) + T.reshape(b, (b.shape[0], 1, 1))
        if activation == "relu":
            h = T.relu(h)
        elif activation == "sigmoid":
            h = T.sigmoid(h)
        return h

    def _entries(self, prefix):
        entries = {}
        for i, (w, b) in enumerate(zip(self.kernels, self.biases)):
            entries[f"{prefix}conv{i}/w"] = w.data
            entries[f"{prefix}conv{i}/b"] = b.data
        return entries

    def _load(self, entries, prefix, n_layers):
        for i in range(n_layers):
            self.kernels.append(Tensor(entries[f"{prefix}conv{i}/w"].copy()))
            self.biases.append(Tensor(entries[f"{prefix}conv{i}/b"].copy()))


class Encoder(_ConvStack):
    """Conv-relu stack followed by one 2x2 average pool."""

    def __init__(self, spec=CodecSpec(), rng=None, _init=True):
        super().__init__()
        self.spec = spec
        if _init:
            rng = rng if rng is not None else np.random.default_rng(0)
            c_in = spec.in_channels
            for c_out in spec.channels:
                self._add_layer(rng, c_in, c_out, spec.kernel)
                c_in = c_out

    def forward_stages(self, x):
        """All conv-relu stage maps plus the pooled feature map."""
        stages = []
        h = T.as_tensor(x)
        for i in range(len(self.kernels)):
            h = self._conv(h, i, "relu")
            stages.append(h)
        return stages, T.avg_pool2(h)

    def forward(self, x):
        return self.forward_stages(x)[1]

    def to_entries(self, prefix=""):
        entries = {
            prefix + "meta/kind": np.array([KIND_CODES["encoder"]]),
            prefix + "meta/in_channels": np.array([self.spec.in_channels], dtype=np.float64),
            prefix + "meta/channels": np.array(self.spec.channels, dtype=np.float64),
            prefix + "meta/kernel": np.array([self.spec.kernel], dtype=np.float64),
        }
        entries.update(self._entries(prefix))
        return entries

    @classmethod
    def from_entries(cls, entries, prefix=""):
        spec = CodecSpec(
            in_channels=int(entries[prefix + "meta/in_channels"][0]),
            channels=tuple(int(c) for c in entries[prefix + "meta/channels"]),
            kernel=int(entries[prefix + "meta/kernel"][0]),
        )
        net = cls(spec, _init=False)
        net._load(entries, prefix, len(spec.channels))
        return net


class Decoder(_ConvStack):
    """Mirror of the encoder: nearest-neighbour upsample, then conv-relu
    layers in reverse channel order, sigmoid on the final layer so outputs
    live in [0, 1]."""

    def __init__(self, spec=CodecSpec(), rng=None, _init=True):
        super().__init__()
        self.spec = spec
        if _init:
            rng = rng if rng is not None else np.random.default_rng(0)
            chain = list(reversed(spec.channels)) + [spec.in_channels]
            for c_in, c_out in zip(chain[:-1], chain[1:]):
                self._add_layer(rng, c_in, c_out, spec.kernel)

    def forward(self, feats):
        h = T.upsample_nearest2(T.as_tensor(feats))
        last = len(self.kernels) - 1
        for i in range(len(self.kernels)):
            h = self._conv(h, i, "sigmoid" if i == last else "relu")
        return h

    def to_entries(self, prefix=""):
        entries = {
            prefix + "meta/kind": np.array([KIND_CODES["decoder"]]),
            prefix + "meta/in_channels": np.array([self.spec.in_channels], dtype=np.float64),
            prefix + "meta/channels": np.array(self.spec.channels, dtype=np.float64),
            prefix + "meta/kernel": np.array([self.spec.kernel], dtype=np.float64),
        }
        entries.update(self._entries(prefix))
        return entries

    @classmethod
    def from_entries(cls, entries, prefix=""):
        spec = CodecSpec(
            in_channels=int(entries[prefix + "meta/in_channels"][0]),
            channels=tuple(int(c) for c in entries[prefix + "meta/channels"]),
            kernel=int(entries[prefix + "meta/kernel"][0]),
        )
        net = cls(spec, _init=False)
        net._load(entries, prefix, len(spec.channels))
        return net


def encode_style(image, encoder):
    """Style vector of an image: channel statistics of its encoded features."""
    feats = encoder.forward(T.as_tensor(image))
    mu, sigma = T.channel_stats(feats)
    return StyleVector(mu.data.copy(), sigma.data.copy())


# ---------------------------------------------------------------------------
# attribute predictor backbone


@dataclass(frozen=True)
class PredictorSpec:
    in_channels: int = 3
    conv_channels: tuple = (8, 16)
    kernel: int = 3
    fc_width: int = 32
    image_size: int = 16

    @property
    def flat_dim(self):
        side = self.image_size // (2 ** len(self.conv_channels))
        return self.conv_channels[-1] * side * side


class PredictorNet(_ConvStack):
    """Two conv-relu-pool stages followed by two fully connected layers."""

    def __init__(self, spec=PredictorSpec(), rng=None, _init=True):
        super().__init__()
        self.spec = spec
        self.fc = None
        if _init:
            rng = rng if rng is not None else np.random.default_rng(0)
            c_in = spec.in_channels
            for c_out in spec.conv_channels:
                self._add_layer(rng, c_in, c_out, spec.kernel)
                c_in = c_out
            self.fc = Mlp(spec.flat_dim, MlpSpec((spec.fc_width, 1), ("relu", "none")), rng=rng)

    def parameters(self):
        return super().parameters() + self.fc.parameters()

    def forward(self, x):
        """(3,H,W) -> scalar logit tensor (1,1); (N,3,H,W) -> (N,1)."""
        h = T.as_tensor(x)
        single = h.ndim == 3
        if single:
            h = T.reshape(h, (1,) + h.shape)
        for i in range(len(self.kernels)):
            h = T.avg_pool2(self._conv(h, i, "relu"))
        h = T.reshape(h, (h.shape[0], self.spec.flat_dim))
        return self.fc.forward(h)

    def to_entries(self, prefix=""):
        entries = {
            prefix + "meta/kind": np.array([KIND_CODES["predictor-net"]]),
            prefix + "meta/in_channels": np.array([self.spec.in_channels], dtype=np.float64),
            prefix + "meta/conv_channels": np.array(self.spec.conv_channels, dtype=np.float64),
            prefix + "meta/kernel": np.array([self.spec.kernel], dtype=np.float64),
            prefix + "meta/fc_width": np.array([self.spec.fc_width], dtype=np.float64),
            prefix + "meta/image_size": np.array([self.spec.image_size], dtype=np.float64),
        }
        entries.update(self._entries(prefix))
        entries.update(self.fc.to_entries(prefix + "fc/"))
        return entries

    @classmethod
    def from_entries(cls, entries, prefix=""):
        spec = PredictorSpec(
            in_channels=int(entries[prefix + "meta/in_channels"][0]),
            conv_channels=tuple(int(c) for c in entries[prefix + "meta/conv_channels"]),
            kernel=int(entries[prefix + "meta/kernel"][0]),
            fc_width=int(entries[prefix + "meta/fc_width"][0]),
            image_size=int(entries[prefix + "meta/image_size"][0]),
        )
        net = cls(spec, _init=False)
        net._load(entries, prefix, len(spec.conv_channels))
        net.fc = Mlp.from_entries(entries, prefix + "fc/")
        return net


# ---------------------------------------------------------------------------
# checkpoint dispatch

KIND_CODES = {
    "mlp": 1.0,
    "style-generator": 2.0,
    "encoder": 3.0,
    "decoder": 4.0,
    "predictor-net": 5.0,
}

_KIND_CLASSES = {}  # populated below once classes exist


def _register_kinds():
    _KIND_CLASSES.update(
        {
            KIND_CODES["mlp"]: Mlp,
            KIND_CODES["style-generator"]: StyleGenerator,
            KIND_CODES["encoder"]: Encoder,
            KIND_CODES["decoder"]: Decoder,
            KIND_CODES["predictor-net"]: PredictorNet,
        }
    )


_register_kinds()


def save_checkpoint(net, path):
    """Persist any network exposing ``to_entries`` to the container format."""
    save_entries(path, net.to_entries())


def load_checkpoint(path):
    """Rebuild a network from a container file written by save_checkpoint."""
    entries = load_entries(path)
    if "meta/kind" not in entries:
        raise CheckpointError("checkpoint has no kind entry")
    kind = float(entries["meta/kind"][0])
    if kind not in _KIND_CLASSES:
        raise CheckpointError(f"unknown network kind code {kind}")
    return _KIND_CLASSES[kind].from_entries(entries)
