"""Bayesian attribute enhancement: sample styles from a GAN-learned style
density with gradient-informed MCMC so the stylized image maximizes a
perceptual-attribute score."""

__version__ = "0.1.0"
