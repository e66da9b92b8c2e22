"""Visual RL with agent-mask-supervised split latent representations."""

__version__ = "0.1.0"
