"""Diffusion processes on continuous and discrete state spaces, with
brute-force oracles for every closed form."""

from ._core import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
