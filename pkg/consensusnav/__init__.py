"""consensusnav - zero-shot visual-target navigation in a deterministic gridworld."""

__version__ = "0.1.0"
