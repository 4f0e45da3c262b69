"""Tree-of-Thoughts scheduling over a base station and edge service providers.

Deterministic edge simulator, timeline engine and a diffusion-actor soft
actor-critic scheduler with classical and learned baselines.
"""

__version__ = "0.1.0"
