"""Controlled-dropout uncertainty estimation (MC vs CMC dropout)."""

from ._core import *  # noqa: F401,F403
from ._core import __version__  # noqa: F401
