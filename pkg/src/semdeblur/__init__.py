"""Semantic-prior face deblurring toolkit.

Submodules: blur (kernel synthesis and degradation), semantics, align,
dataset, networks, losses, training, checkpoints, metrics, evaluate,
experiments, facegen, cli.
"""

__version__ = "0.1.0"
