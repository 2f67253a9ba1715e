"""Acrobot model-based RL benchmark.

A self-contained benchmark of generative one-step dynamics models on the
Acrobot swing-up system: a model zoo sharing one density-model interface,
static forecast metrics (likelihood ratio, outlier rate, explained variance,
calibration, and their long-horizon Monte-Carlo versions), random-shooting
and cross-entropy MPC planners, and the iterated learn/plan loop with its
mean-asymptotic-reward summary metrics.
"""

__version__ = "0.1.0"

from .backend import backend_name

__all__ = ["backend_name", "__version__"]
