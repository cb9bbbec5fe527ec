"""Weakly supervised fibrosis segmentation on synthetic lung phantoms.

The package covers the whole workflow: phantom dataset generation, a small
diffusion autoencoder with deterministic DDIM sampling/inversion, a one-layer
latent classifier, classifier-guided latent editing with Frechet-distance
strength selection, pseudo-mask refinement, U-Net training with cross
validation, and an orchestrating pipeline with content-addressed caching.
"""

__version__ = "0.1.0"
