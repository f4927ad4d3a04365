"""Experiment configuration: one flat, versioned YAML key/value file.

Schema (all keys optional except config_version; defaults shown below in the
dataclass).  tau and lam left as null resolve to per-attribute defaults:
tau 0.1 / lam 100 for the regression attribute, tau 0.01 / lam 10 for the
binary one.

Seed splitting rule: every stage draws from a numpy Generator keyed as
(master_seed, stage_code, *indices) where the stage codes are fixed in
STAGE_CODES; per-image enhancement chains additionally key by method index
and image index.  Stages are therefore independently rerunnable.
"""

from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import yaml

CONFIG_VERSION = 1

STAGE_CODES = {
    "data": 0,      # synthdata streams add their own sub-codes
    "codec": 10,
    "transfer": 11,
    "predictor-internal": 20,
    "predictor-external": 21,
    "gan": 30,
    "enhance": 40,
    "control": 41,
}

METHOD_CODES = {"baseline": 0, "bae": 1, "abae": 2, "random": 3}

TAU_DEFAULTS = {"regression": 0.1, "binary": 0.01}
LAM_DEFAULTS = {"regression": 100.0, "binary": 10.0}
NORMALIZATION_MODES = {"regression": "sigmoid-power", "binary": "power"}


def stage_rng(master_seed, stage, *indices):
    """The documented seed-splitting rule."""
    return np.random.default_rng(
        [int(master_seed), STAGE_CODES[stage]] + [int(i) for i in indices])


class ConfigFileError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    config_version: int = CONFIG_VERSION
    out_dir: str = "runs/exp"
    master_seed: int = 0
    attribute: str = "regression"  # or 'binary'

    # data
    image_size: int = 16
    styles_k: int = 500
    n_internal: int = 600
    n_external: int = 600
    n_test: int = 100

    # nets / training budgets (fast desk profile)
    channels: int = 16
    z_dim: int = 64
    codec_iters: int = 400
    transfer_iters: int = 400
    gamma: float = 10.0
    predictor_iters: int = 600
    gan_iters: int = 2000
    gan_batch: int = 32
    gan_critic_steps: int = 5
    gan_penalty: float = 10.0
    gan_lr: float = 1e-4

    # sampling
    sampler: str = "langevin"  # 'mh' | 'langevin' | 'hmc' accepted on the CLI
    tau: float | None = None
    lam: float | None = None
    samples: int = 100
    burn_in: int = 200
    adaptive_gradient: bool = False
    adaptive_lr: bool = True
    count_mode: str = "accepted"
    leapfrog_steps: int = 10
    hmc_step: float = 0.05
    prop_sigma: float = 0.5

    # alpha policy
    alpha_mode: str = "fixed"  # 'fixed' | 'adaptive'
    alpha0: float = 0.5
    alpha_prior_mean: float = 0.5
    alpha_prior_var: float = 0.25

    # evaluation
    top_n: list = field(default_factory=lambda: [1, 5, 10])

    def __post_init__(self):
        if self.attribute not in ("regression", "binary"):
            raise ConfigFileError(f"unknown attribute {self.attribute!r}")
        if not 0.0 <= self.alpha0 <= 1.0:
            raise ConfigFileError("alpha0 must lie in [0, 1]")
        if self.alpha_mode not in ("fixed", "adaptive"):
            raise ConfigFileError(f"unknown alpha mode {self.alpha_mode!r}")

    @property
    def tau_resolved(self):
        return self.tau if self.tau is not None else TAU_DEFAULTS[self.attribute]

    @property
    def lam_resolved(self):
        return self.lam if self.lam is not None else LAM_DEFAULTS[self.attribute]

    @property
    def normalization_mode(self):
        return NORMALIZATION_MODES[self.attribute]

    def to_file(self, path):
        Path(path).write_text(yaml.safe_dump(asdict(self), sort_keys=True))

    @classmethod
    def from_file(cls, path):
        raw = yaml.safe_load(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ConfigFileError(f"{path}: expected a mapping of keys to values")
        if "config_version" not in raw:
            raise ConfigFileError(f"{path}: missing config_version")
        if int(raw["config_version"]) != CONFIG_VERSION:
            raise ConfigFileError(
                f"{path}: config_version {raw['config_version']} unsupported "
                f"(this build reads version {CONFIG_VERSION})")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigFileError(f"{path}: unknown keys {sorted(unknown)}")
        return cls(**raw)
