"""Pruning statistics laboratory: IMP, kurtosis, receptive-field and cavity analyses."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401
