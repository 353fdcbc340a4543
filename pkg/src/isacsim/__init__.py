"""Bistatic ISAC channel simulator.

Dual-component geometry-based stochastic channel model (background channel
plus RCS-parameterized target channel with hybrid stochastic/deterministic
clusters) with an evaluation harness for BER, ergodic capacity, target
ranging and detection ROC experiments.
"""

__version__ = "0.1.0"

from .config import RunConfig, default_config, load_config  # noqa: F401
from .simulate import simulate_drop  # noqa: F401
