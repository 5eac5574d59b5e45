"""Constrained model-based RL: environment, dynamics ensemble, cost classifier,
robust cross-entropy planner and experiment harness."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
