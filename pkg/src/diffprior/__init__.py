"""Variational autoencoders with Gaussian, flow and diffusion latent priors."""

__version__ = "0.1.0"
