"""Adversarial domain randomization at desk scale.

Modules: ``renderer`` (procedural simulators), ``learner`` (numpy MLP),
``policy`` (categorical REINFORCE sampler), ``adversary`` (training loops),
``theory`` (multi-source bound) and ``harness`` (configs, runs, CLI plumbing).
"""

__version__ = "0.1.0"
