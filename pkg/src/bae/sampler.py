"""Energy functions over style latents and three MCMC samplers.

The energy of a latent z is the log of (normalized attribute score of the
stylized image) x (standard normal density of z); the adaptive variant adds
a stylization coefficient alpha with its own Gaussian prior, clipped into
[0, 1] before stylization.  Gradients come from a full backward pass through
predictor -> decoder -> feature alignment -> generator.

Chains: gradient-free Metropolis-Hastings, Metropolis-adjusted Langevin
(proposal z + tau * grad + sqrt(2 tau) * noise with the standard squared-norm
correction), and Hamiltonian with leapfrog integration.  Two optional
modifications raise acceptance rates: an adaptive-moment preconditioner on
the gradient (state kept for the whole chain; the reverse-proposal gradient
is preconditioned with the same state, which is an approximation that
technically breaks exact detailed balance) and an adaptive step size that
decays by 0.9 on rejection and resets on acceptance.

One chain is strictly sequential; chains with different seeds or images are
independent and share models read-only.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attribute import log_normalized_graph
from .styletx import adain, mix_features
from .tensor import Tensor

LOG_2PI = math.log(2.0 * math.pi)


class EnergyError(RuntimeError):
    """A non-finite value appeared while evaluating the energy."""

    def __init__(self, stage, message=None):
        super().__init__(message or f"non-finite value at stage '{stage}'")
        self.stage = stage


class StuckChainError(RuntimeError):
    """Too many consecutive rejections; lower tau or lambda."""


class ConfigError(ValueError):
    pass


@dataclass
class ChainConfig:
    sampler: str = "langevin"  # 'metropolis-hastings' | 'langevin' | 'hamiltonian'
    tau: float = 0.1
    samples: int = 100
    adaptive_gradient: bool = False
    adaptive_lr: bool = False
    decay: float = 0.9
    burn_in: int = 200
    seed: int = 0
    leapfrog_steps: int = 10
    hmc_step: float = 0.05
    prop_sigma: float = 0.5
    count_mode: str = "accepted"  # or 'proposals'
    max_consecutive_rejects: int = 10_000

    def __post_init__(self):
        if self.sampler not in ("metropolis-hastings", "langevin", "hamiltonian"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.samples < 1:
            raise ConfigError("need at least one sample")
        if not 0.0 < self.decay < 1.0:
            raise ConfigError("decay must lie in (0, 1)")
        if self.leapfrog_steps < 1:
            raise ConfigError("need at least one leapfrog step")
        if self.count_mode not in ("accepted", "proposals"):
            raise ConfigError(f"unknown count mode {self.count_mode!r}")


@dataclass
class ChainResult:
    samples: list            # accepted candidates only (the enhancement set)
    energies: list
    accept_trace: list
    tau_trace: list
    proposal_count: int
    alphas: list | None = None
    trace: list | None = None  # post-burn-in state after every proposal (holds included)

    @property
    def acceptance_rate(self):
        if not self.accept_trace:
            return 0.0
        return float(np.mean(self.accept_trace))


# ---------------------------------------------------------------------------
# adaptive pieces


class AdaptiveGradient:
    """Adaptive-moment preconditioner: returns m_hat / (sqrt(v_hat) + eps).

    Normalizes per-coordinate gradient magnitudes, which matters when one
    variable's gradient runs orders of magnitude hotter than the others'
    (the stylization coefficient versus the latent).
    """

    def __init__(self, dim, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def _scaled(self, m, v, t):
        m_hat = m / (1.0 - self.beta1 ** t)
        v_hat = v / (1.0 - self.beta2 ** t)
        return m_hat / (np.sqrt(v_hat) + self.eps)

    def update(self, g):
        """Fold g into the moments and return the preconditioned gradient."""
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        return self._scaled(self.m, self.v, self.t)

    def preview(self, g):
        """Preconditioned g under a tentative (uncommitted) moment update."""
        m = self.beta1 * self.m + (1.0 - self.beta1) * g
        v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        return self._scaled(m, v, self.t + 1)


class StepSizeSchedule:
    """Multiplicative decay on rejection, reset to the initial on acceptance.

    The value never exceeds the initial step and never reaches zero.
    """

    def __init__(self, initial, decay=0.9, enabled=True):
        self.initial = initial
        self.decay = decay
        self.enabled = enabled
        self.value = initial

    def accepted(self):
        if self.enabled:
            self.value = self.initial

    def rejected(self):
        if self.enabled:
            self.value *= self.decay


def leapfrog(grad_fn, z, p, steps, step_size):
    """Leapfrog integration of (z, p) with unit mass; returns (z, p).

    grad_fn returns the gradient of the log-density (so momenta are kicked
    uphill).  Positions and momenta are copied, not mutated.
    """
    z = np.array(z, dtype=np.float64)
    p = np.array(p, dtype=np.float64)
    p = p + 0.5 * step_size * grad_fn(z)
    for i in range(steps):
        z = z + step_size * p
        if i < steps - 1:
            p = p + step_size * grad_fn(z)
    p = p + 0.5 * step_size * grad_fn(z)
    return z, p


# ---------------------------------------------------------------------------
# analytic energies (targets for tests, priors, diagnostics)


class GaussianEnergy:
    """log N(x; mean, cov) with analytic gradient."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=np.float64)
        cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        self.precision = np.linalg.inv(cov)
        sign, logdet = np.linalg.slogdet(cov)
        self.dim = self.mean.shape[0]
        self._log_norm = -0.5 * (self.dim * LOG_2PI + logdet)

    def eval(self, x, need_grad=True):
        d = np.asarray(x, dtype=np.float64) - self.mean
        pd = self.precision @ d
        val = self._log_norm - 0.5 * float(d @ pd)
        return val, (-pd if need_grad else None)


class CallableEnergy:
    """Wrap (value, gradient) callables as an energy."""

    def __init__(self, dim, fn, grad_fn=None):
        self.dim = dim
        self._fn = fn
        self._grad = grad_fn

    def eval(self, x, need_grad=True):
        x = np.asarray(x, dtype=np.float64)
        val = float(self._fn(x))
        grad = None
        if need_grad:
            if self._grad is None:
                raise ConfigError("energy has no gradient; use a gradient-free sampler")
            grad = np.asarray(self._grad(x), dtype=np.float64)
        return val, grad


# ---------------------------------------------------------------------------
# style energies


def _check_finite(stage, *arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise EnergyError(stage)


class StyleEnergy:
    """Energy over z: log(normalized score of the stylization) + log N(z;0,I).

    ``alpha0`` fixes the stylization strength inside the energy (0 means full
    stylization).  ``include_prior=False`` drops the latent prior, leaving a
    pure (log-)score landscape.
    """

    def __init__(self, image, generator, encoder, decoder, predictor, norm_spec,
                 alpha0=0.5, include_prior=True):
        self.generator = generator
        self.decoder = decoder
        self.predictor = predictor
        self.norm_spec = norm_spec
        self.alpha0 = float(alpha0)
        self.include_prior = include_prior
        self.dim = generator.z_dim
        feats = encoder.forward(Tensor(np.asarray(image, dtype=np.float64)))
        self._feats = feats.data  # content features are constant per image

    def _stylized(self, z_t, alpha):
        mu, sigma = self.generator.style_stats_graph(z_t)
        _check_finite("generator", mu.data, sigma.data)
        feats = Tensor(self._feats)
        target = adain(feats, mu, sigma)
        mixed = mix_features(feats, target, alpha)
        image = self.decoder.forward(mixed)
        _check_finite("stylize", image.data)
        return image

    def _log_score(self, image):
        raw = self.predictor.forward(image)
        _check_finite("predictor", raw.data)
        return log_normalized_graph(T.reshape(raw, ()), self.norm_spec)

    def eval(self, z, need_grad=True):
        z = np.asarray(z, dtype=np.float64)
        z_t = Tensor(z)
        value = self._log_score(self._stylized(z_t, self.alpha0))
        if self.include_prior:
            value = value - 0.5 * T.tensor_sum(T.square(z_t)) - 0.5 * self.dim * LOG_2PI
        _check_finite("energy", value.data)
        if not need_grad:
            return value.item(), None
        value.backward()
        return value.item(), z_t.grad.copy()


class StyleAlphaEnergy(StyleEnergy):
    """Energy over (z, alpha): the coefficient is a sampled variable with a
    Gaussian prior; clip into [0, 1] happens before stylization and its
    gradient is zero outside that interval."""

    def __init__(self, image, generator, encoder, decoder, predictor, norm_spec,
                 alpha_prior_mean=0.5, alpha_prior_var=0.25, include_prior=True):
        super().__init__(image, generator, encoder, decoder, predictor, norm_spec,
                         include_prior=include_prior)
        self.alpha_prior_mean = alpha_prior_mean
        self.alpha_prior_var = alpha_prior_var
        self.dim = generator.z_dim + 1

    def split(self, point):
        point = np.asarray(point, dtype=np.float64)
        return point[:-1], float(point[-1])

    def eval(self, point, need_grad=True):
        z, alpha = self.split(point)
        z_t = Tensor(z)
        a_t = Tensor(alpha)
        value = self._log_score(self._stylized(z_t, T.clip01(a_t)))
        if self.include_prior:
            value = value - 0.5 * T.tensor_sum(T.square(z_t)) - 0.5 * (self.dim - 1) * LOG_2PI
            var = self.alpha_prior_var
            value = (value - T.square(a_t - self.alpha_prior_mean) / (2.0 * var)
                     - 0.5 * math.log(2.0 * math.pi * var))
        _check_finite("energy", value.data)
        if not need_grad:
            return value.item(), None
        value.backward()
        return value.item(), np.concatenate([z_t.grad, np.atleast_1d(a_t.grad)])


# ---------------------------------------------------------------------------
# chains


class _Bookkeeper:
    """Shared proposal accounting: burn-in, counting mode, stuck guard."""

    def __init__(self, cfg, collect_alpha=None, keep_trace=True):
        self.cfg = cfg
        self.samples = []
        self.energies = []
        self.alphas = [] if collect_alpha else None
        self._collect_alpha = collect_alpha
        self.accept_trace = []
        self.tau_trace = []
        self.trace = [] if keep_trace else None
        self.proposals = 0
        self._consecutive_rejects = 0

    def record(self, accepted, tau, point, value):
        """Account one proposal; ``point`` is the state after accept/reject."""
        self.proposals += 1
        self.accept_trace.append(bool(accepted))
        self.tau_trace.append(float(tau))
        past_burn_in = self.proposals > self.cfg.burn_in
        if past_burn_in and self.trace is not None:
            self.trace.append(np.array(point))
        if accepted:
            self._consecutive_rejects = 0
            if past_burn_in:
                self.samples.append(np.array(point))
                self.energies.append(float(value))
                if self.alphas is not None:
                    self.alphas.append(self._collect_alpha(point))
        else:
            self._consecutive_rejects += 1
            if self._consecutive_rejects >= self.cfg.max_consecutive_rejects:
                raise StuckChainError(
                    f"{self._consecutive_rejects} consecutive rejections; "
                    "decrease tau or lambda"
                )

    def done(self):
        if self.cfg.count_mode == "accepted":
            return len(self.samples) >= self.cfg.samples
        return self.proposals >= self.cfg.burn_in + self.cfg.samples

    def result(self):
        return ChainResult(
            samples=self.samples,
            energies=self.energies,
            accept_trace=self.accept_trace,
            tau_trace=self.tau_trace,
            proposal_count=self.proposals,
            alphas=self.alphas,
            trace=self.trace,
        )


def _init_point(energy, cfg, rng, init):
    if init is not None:
        return np.array(init, dtype=np.float64)
    return rng.standard_normal(energy.dim)


def _alpha_extractor(energy):
    if isinstance(energy, StyleAlphaEnergy):
        return lambda point: float(np.clip(point[-1], 0.0, 1.0))
    return None


def mh_chain(energy, cfg, init=None):
    """Random-walk Metropolis with a symmetric Gaussian proposal."""
    rng = np.random.default_rng(cfg.seed)
    z = _init_point(energy, cfg, rng, init)
    val, _ = energy.eval(z, need_grad=False)
    sched = StepSizeSchedule(cfg.prop_sigma, cfg.decay, cfg.adaptive_lr)
    book = _Bookkeeper(cfg, _alpha_extractor(energy))
    while not book.done():
        cand = z + sched.value * rng.standard_normal(energy.dim)
        cand_val, _ = energy.eval(cand, need_grad=False)
        log_r = cand_val - val
        if np.log(rng.random()) <= min(0.0, log_r):
            z, val = cand, cand_val
            book.record(True, sched.value, z, val)
            sched.accepted()
        else:
            book.record(False, sched.value, z, val)
            sched.rejected()
    return book.result()


def langevin_chain(energy, cfg, init=None):
    """Metropolis-adjusted Langevin: candidates drift along the gradient.

    Candidate: z + tau * g + sqrt(2 tau) * noise, where g is the (optionally
    preconditioned) gradient.  Acceptance uses the standard correction
    log r = E(c) - E(z) + |c - z - tau g(z)|^2/(4 tau) - |z - c - tau g(c)|^2/(4 tau).
    """
    rng = np.random.default_rng(cfg.seed)
    z = _init_point(energy, cfg, rng, init)
    val, grad = energy.eval(z)
    precond = AdaptiveGradient(energy.dim) if cfg.adaptive_gradient else None
    sched = StepSizeSchedule(cfg.tau, cfg.decay, cfg.adaptive_lr)
    book = _Bookkeeper(cfg, _alpha_extractor(energy))
    while not book.done():
        tau = sched.value
        g = precond.update(grad) if precond else grad
        cand = z + tau * g + math.sqrt(2.0 * tau) * rng.standard_normal(energy.dim)
        cand_val, cand_grad = energy.eval(cand)
        g_cand = precond.preview(cand_grad) if precond else cand_grad
        fwd = cand - z - tau * g
        rev = z - cand - tau * g_cand
        log_r = (cand_val - val
                 + float(fwd @ fwd) / (4.0 * tau)
                 - float(rev @ rev) / (4.0 * tau))
        if np.log(rng.random()) <= min(0.0, log_r):
            z, val, grad = cand, cand_val, cand_grad
            book.record(True, tau, z, val)
            sched.accepted()
        else:
            book.record(False, tau, z, val)
            sched.rejected()
    return book.result()


def hmc_chain(energy, cfg, init=None):
    """Hamiltonian chain: leapfrog trajectories with unit mass.

    A non-finite Hamiltonian marks a divergent trajectory: the candidate is
    rejected and the step size decays when the adaptive schedule is on.
    """
    rng = np.random.default_rng(cfg.seed)
    z = _init_point(energy, cfg, rng, init)
    val, _ = energy.eval(z, need_grad=False)
    sched = StepSizeSchedule(cfg.hmc_step, cfg.decay, cfg.adaptive_lr)
    book = _Bookkeeper(cfg, _alpha_extractor(energy))

    def grad_fn(x):
        return energy.eval(x)[1]

    while not book.done():
        p = rng.standard_normal(energy.dim)
        h_old = -val + 0.5 * float(p @ p)
        try:
            cand, p_new = leapfrog(grad_fn, z, p, cfg.leapfrog_steps, sched.value)
            cand_val, _ = energy.eval(cand, need_grad=False)
            h_new = -cand_val + 0.5 * float(p_new @ p_new)
        except EnergyError:
            h_new = math.inf
            cand_val = -math.inf
        if math.isfinite(h_new) and np.log(rng.random()) <= min(0.0, h_old - h_new):
            z, val = cand, cand_val
            book.record(True, sched.value, z, val)
            sched.accepted()
        else:
            book.record(False, sched.value, z, val)
            sched.rejected()
    return book.result()


_CHAINS = {
    "metropolis-hastings": mh_chain,
    "langevin": langevin_chain,
    "hamiltonian": hmc_chain,
}


def run_chain(energy, cfg, init=None):
    return _CHAINS[cfg.sampler](energy, cfg, init=init)


def sample_styles_bae(image, models, cfg, norm_spec, alpha0=0.5, adaptive_alpha=False,
                      alpha_prior_mean=0.5, alpha_prior_var=0.25, init=None):
    """Run the configured chain on the (adaptive-)style energy of one image.

    ``models`` carries generator / encoder / decoder / internal predictor.
    Returns the ChainResult; alphas are populated (and clipped) only in the
    adaptive variant.
    """
    if adaptive_alpha:
        energy = StyleAlphaEnergy(image, models.generator, models.encoder,
                                  models.decoder, models.internal, norm_spec,
                                  alpha_prior_mean=alpha_prior_mean,
                                  alpha_prior_var=alpha_prior_var)
        if init is None:
            rng = np.random.default_rng([cfg.seed, 0xA1FA])  # distinct from the chain stream
            init = np.concatenate([
                rng.standard_normal(models.generator.z_dim),
                [alpha_prior_mean + math.sqrt(alpha_prior_var) * rng.standard_normal()],
            ])
    else:
        energy = StyleEnergy(image, models.generator, models.encoder,
                             models.decoder, models.internal, norm_spec,
                             alpha0=alpha0)
    return run_chain(energy, cfg, init=init)
