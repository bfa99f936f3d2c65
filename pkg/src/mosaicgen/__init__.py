"""Multi-object image/mask dataset synthesis from region-prompted diffusion attention."""

__version__ = "0.1.0"
