"""Reward learning from pairwise preferences with differentiable decision trees."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
