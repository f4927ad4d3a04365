"""End-to-end experiment pipeline: training orchestration, the exhaustive
baseline, chain-driven enhancement runs, and top-N score-difference
evaluation.

Enhancement runs consult only the internal predictor; the external predictor
enters in ``evaluate_runs`` and nowhere else.  Per-image runs are independent
(models shared read-only) and seeded by (master_seed, stage, method, image).
"""

from dataclasses import dataclass, field

import numpy as np

from .attribute import NormalizationSpec, train_predictor
from .config import METHOD_CODES, ExperimentConfig, stage_rng
from .nets import CodecSpec, Decoder, Encoder, StyleVector
from .sampler import ChainConfig, sample_styles_bae
from .stylegan import GanConfig, build_corpus, train_style_gan
from .styletx import TransferLossConfig, train_autoencoder, train_transfer
from .tensor import EPS_STAT, ContractError, Tensor

SAMPLER_NAMES = {"mh": "metropolis-hastings", "langevin": "langevin", "hmc": "hamiltonian"}


@dataclass
class Models:
    encoder: object
    decoder: object
    generator: object = None
    internal: object = None
    external: object = None
    corpus: object = None
    critic: object = None


# ---------------------------------------------------------------------------
# training stages


def train_codec_stage(cfg, corp):
    """Autoencoder pretraining, then decoder fine-tuning with style losses.

    The encoder is frozen after pretraining; only the decoder sees the
    transfer losses.  Content training images are the two predictor splits
    (the test set stays unseen).
    """
    rng = stage_rng(cfg.master_seed, "codec")
    spec = CodecSpec(in_channels=3, channels=(8, cfg.channels), kernel=3)
    encoder = Encoder(spec, rng=rng)
    decoder = Decoder(spec, rng=rng)
    content = np.concatenate([corp["internal"], corp["external"]])
    hist_ae = train_autoencoder(content, encoder, decoder,
                                iters=cfg.codec_iters, rng=rng)
    hist_tx = train_transfer(content, corp["styles"], encoder, decoder,
                             cfg=TransferLossConfig(gamma=cfg.gamma),
                             iters=cfg.transfer_iters,
                             rng=stage_rng(cfg.master_seed, "transfer"))
    return encoder, decoder, {"autoencoder": hist_ae, "transfer": hist_tx}


def train_predictor_stage(cfg, corp):
    """Internal and external predictors on their disjoint splits."""
    mode = cfg.attribute
    stats = {}
    preds = {}
    for split in ("internal", "external"):
        rng = stage_rng(cfg.master_seed, f"predictor-{split}")
        labels = corp[f"{split}_labels_{mode}"]
        preds[split], stats[split] = train_predictor(
            corp[split], labels, mode, iters=cfg.predictor_iters, rng=rng)
    return preds["internal"], preds["external"], stats


def train_gan_stage(cfg, corp, encoder):
    """Style corpus extraction and adversarial density training."""
    corpus = build_corpus(corp["styles"], encoder)
    gan_cfg = GanConfig(batch_size=cfg.gan_batch, iterations=cfg.gan_iters,
                        critic_steps=cfg.gan_critic_steps,
                        penalty_weight=cfg.gan_penalty, lr=cfg.gan_lr,
                        z_dim=cfg.z_dim, seed=[cfg.master_seed, 30])
    generator, critic, history = train_style_gan(corpus, gan_cfg)
    return generator, critic, corpus, history


def train_all(cfg, corp):
    encoder, decoder, _ = train_codec_stage(cfg, corp)
    internal, external, _ = train_predictor_stage(cfg, corp)
    generator, critic, corpus, _ = train_gan_stage(cfg, corp, encoder)
    return Models(encoder=encoder, decoder=decoder, generator=generator,
                  internal=internal, external=external, corpus=corpus,
                  critic=critic)


# ---------------------------------------------------------------------------
# stylization fast paths (pure numpy, gradient-free; numerically identical to
# the graph ops, which use the same formulas)


def content_features(image, encoder):
    return encoder.forward(Tensor(np.asarray(image, dtype=np.float64))).data


def stylize_batch(image, mus, sigmas, alphas, encoder, decoder, feats=None):
    """Stylize one content image with K style stats at strength alphas.

    ``alphas`` is a scalar or a (K,) vector; returns (K, 3, H, W).
    """
    feats = content_features(image, encoder) if feats is None else feats
    mu_x = feats.mean(axis=(1, 2))
    sigma_x = np.sqrt(feats.var(axis=(1, 2)) + EPS_STAT)
    scale = np.asarray(sigmas, dtype=np.float64) / sigma_x
    shift = np.asarray(mus, dtype=np.float64) - mu_x * scale
    target = feats[None] * scale[:, :, None, None] + shift[:, :, None, None]
    a = np.asarray(alphas, dtype=np.float64).reshape(-1, 1, 1, 1)
    mixed = a * feats[None] + (1.0 - a) * target
    return decoder.forward(Tensor(mixed)).data


def internal_scores(images, predictor):
    return predictor.score(np.asarray(images, dtype=np.float64))


# ---------------------------------------------------------------------------
# ranked runs


@dataclass
class RankedEntry:
    rank: int
    sample_index: int
    alpha: float
    internal: float
    external: float | None = None
    delta: float | None = None


@dataclass
class MethodRun:
    method: str
    entries: list
    images: np.ndarray  # ranked, truncated to the kept depth


def _rank(method, internals, alphas, images, keep):
    """Descending by internal score, ties broken by sample index."""
    internals = np.asarray(internals, dtype=np.float64)
    order = sorted(range(len(internals)), key=lambda i: (-internals[i], i))
    entries = [RankedEntry(rank=r + 1, sample_index=i, alpha=float(alphas[i]),
                           internal=float(internals[i]))
               for r, i in enumerate(order)]
    kept = np.stack([images[i] for i in order[:keep]]) if len(order) else \
        np.zeros((0,) + tuple(np.shape(images)[1:]))
    return MethodRun(method=method, entries=entries, images=kept)


def run_baseline_b(image, models, alpha0=0.5, keep=10, chunk=128):
    """Stylize with every corpus style at fixed strength and rank."""
    styles = models.corpus.denormalize(models.corpus.vectors)
    c = models.corpus.channels
    mus, sigmas = styles[:, :c], np.exp(styles[:, c:])
    feats = content_features(image, models.encoder)
    images, internals = [], []
    for lo in range(0, len(mus), chunk):
        batch = stylize_batch(image, mus[lo:lo + chunk], sigmas[lo:lo + chunk],
                              alpha0, models.encoder, models.decoder, feats=feats)
        images.append(batch)
        internals.append(internal_scores(batch, models.internal))
    images = np.concatenate(images) if images else np.zeros((0, 3) + image.shape[1:])
    internals = np.concatenate(internals) if internals else np.zeros(0)
    alphas = np.full(len(internals), float(alpha0))
    return _rank("baseline", internals, alphas, images, keep)


def run_random_control(image, models, n, seed, alpha0=0.5, keep=10):
    """M random latents, no chain: the no-search control."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, models.generator.z_dim))
    mus, sigmas = _styles_from_latents(models, z)
    images = stylize_batch(image, mus, sigmas, alpha0, models.encoder, models.decoder)
    internals = internal_scores(images, models.internal)
    return _rank("random", internals, np.full(n, float(alpha0)), images, keep)


def _styles_from_latents(models, z):
    raw = models.generator.mlp.forward(Tensor(np.asarray(z, dtype=np.float64))).data
    vec = raw * models.generator.norm_scale + models.generator.norm_mean
    c = models.generator.channels
    return vec[:, :c], np.exp(vec[:, c:])


def _chain_run(method, image, models, chain_cfg, norm_spec, alpha0, adaptive,
               alpha_prior_mean, alpha_prior_var, keep):
    result = sample_styles_bae(image, models, chain_cfg, norm_spec,
                               alpha0=alpha0, adaptive_alpha=adaptive,
                               alpha_prior_mean=alpha_prior_mean,
                               alpha_prior_var=alpha_prior_var)
    if adaptive:
        z = np.stack([p[:-1] for p in result.samples])
        alphas = np.asarray(result.alphas, dtype=np.float64)
    else:
        z = np.stack(result.samples)
        alphas = np.full(len(z), float(alpha0))
    mus, sigmas = _styles_from_latents(models, z)
    images = stylize_batch(image, mus, sigmas, alphas, models.encoder, models.decoder)
    internals = internal_scores(images, models.internal)
    run = _rank(method, internals, alphas, images, keep)
    return run, result


def run_bae(image, models, chain_cfg, norm_spec, alpha0=0.5, keep=10):
    """Chain over z with fixed stylization strength; ranked by internal score."""
    return _chain_run("bae", image, models, chain_cfg, norm_spec, alpha0,
                      False, 0.5, 0.25, keep)


def run_abae(image, models, chain_cfg, norm_spec, alpha_prior_mean=0.5,
             alpha_prior_var=0.25, keep=10):
    """Chain over (z, alpha); sampled strengths are clipped into [0, 1]."""
    return _chain_run("abae", image, models, chain_cfg, norm_spec, 0.5,
                      True, alpha_prior_mean, alpha_prior_var, keep)


# ---------------------------------------------------------------------------
# evaluation


def delta_a(original, stylized, external):
    """External score difference, stylized minus original."""
    return float(external.score(np.asarray(stylized)) - external.score(np.asarray(original)))


def topn_mean_delta(entries, n):
    """Mean delta over the N entries ranked highest by internal score."""
    if n > len(entries):
        raise ContractError(f"top-{n} requested but only {len(entries)} results")
    deltas = [e.delta for e in entries[:n]]
    if any(d is None for d in deltas):
        raise ContractError("entries lack external deltas; run evaluation first")
    return float(np.mean(deltas))


def chain_config_from(cfg, method, image_index):
    """ChainConfig for one image/method, seeded by the documented rule."""
    return ChainConfig(
        sampler=SAMPLER_NAMES.get(cfg.sampler, cfg.sampler),
        tau=cfg.tau_resolved,
        samples=cfg.samples,
        adaptive_gradient=cfg.adaptive_gradient,
        adaptive_lr=cfg.adaptive_lr,
        burn_in=cfg.burn_in,
        seed=[cfg.master_seed, 40, METHOD_CODES[method], int(image_index)],
        leapfrog_steps=cfg.leapfrog_steps,
        hmc_step=cfg.hmc_step,
        prop_sigma=cfg.prop_sigma,
        count_mode=cfg.count_mode,
    )


def norm_spec_from(cfg):
    return NormalizationSpec(cfg.normalization_mode, cfg.lam_resolved)


def enhance_image(method, image, models, cfg, image_index, keep=None):
    keep = keep if keep is not None else max(cfg.top_n)
    norm_spec = norm_spec_from(cfg)
    if method == "baseline":
        return run_baseline_b(image, models, alpha0=cfg.alpha0, keep=keep)
    if method == "random":
        seed = [cfg.master_seed, 41, METHOD_CODES["random"], int(image_index)]
        return run_random_control(image, models, cfg.samples, seed,
                                  alpha0=cfg.alpha0, keep=keep)
    chain_cfg = chain_config_from(cfg, method, image_index)
    if method == "bae":
        return run_bae(image, models, chain_cfg, norm_spec,
                       alpha0=cfg.alpha0, keep=keep)[0]
    if method == "abae":
        return run_abae(image, models, chain_cfg, norm_spec,
                        alpha_prior_mean=cfg.alpha_prior_mean,
                        alpha_prior_var=cfg.alpha_prior_var, keep=keep)[0]
    raise ValueError(f"unknown method {method!r}")


def enhance_testset(cfg, models, corp, methods):
    """Run each method over the test images; returns {method: [MethodRun]}."""
    runs = {}
    for method in methods:
        runs[method] = [
            enhance_image(method, corp["test"][i], models, cfg, i)
            for i in range(len(corp["test"]))
        ]
    return runs


@dataclass
class ImageReport:
    image_id: str
    original_external: float
    methods: dict  # method -> list[RankedEntry]


@dataclass
class RunReport:
    attribute: str
    master_seed: int
    top_n: list
    per_image: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)  # method -> {n: mean delta}


def evaluate_runs(cfg, models, corp, runs):
    """Attach external scores and deltas; aggregate top-N means.

    This is the only place the external predictor is consulted.
    """
    test = corp["test"]
    ids = corp["test_ids"]
    orig_ext = models.external.score(test) if len(test) else np.zeros(0)
    report = RunReport(attribute=cfg.attribute, master_seed=cfg.master_seed,
                       top_n=list(cfg.top_n))
    per_method_imgs = {m: [] for m in runs}
    for m, image_runs in runs.items():
        for run in image_runs:
            per_method_imgs[m].append(run.images)
    ext_scores = {}
    for m, img_stacks in per_method_imgs.items():
        if img_stacks and sum(len(s) for s in img_stacks):
            flat = np.concatenate(img_stacks)
            scores = models.external.score(flat)
            ext_scores[m] = np.split(scores, np.cumsum([len(s) for s in img_stacks])[:-1])
        else:
            ext_scores[m] = [np.zeros(0) for _ in img_stacks]
    for i, image_id in enumerate(ids):
        methods_out = {}
        for m, image_runs in runs.items():
            run = image_runs[i]
            scores = ext_scores[m][i]
            for k, entry in enumerate(run.entries[: len(scores)]):
                entry.external = float(scores[k])
                entry.delta = float(scores[k] - orig_ext[i])
            methods_out[m] = run.entries
        report.per_image.append(ImageReport(image_id=image_id,
                                            original_external=float(orig_ext[i]),
                                            methods=methods_out))
    for m in runs:
        report.aggregates[m] = {}
        for n in cfg.top_n:
            vals = [topn_mean_delta(img.methods[m], n) for img in report.per_image
                    if len(img.methods[m]) >= n and img.methods[m][0].delta is not None]
            report.aggregates[m][n] = float(np.mean(vals)) if vals else float("nan")
    return report


def run_experiment(cfg, corp, models=None, methods=("baseline", "bae", "abae")):
    """Train (unless models are given), enhance the test set, evaluate."""
    if models is None:
        models = train_all(cfg, corp)
    runs = enhance_testset(cfg, models, corp, list(methods))
    report = evaluate_runs(cfg, models, corp, runs)
    return report, models, runs
