"""Upscaled two-phase flow in periodic porous media.

Cell problems (correctors, periodic Stokes) on a masked reference cell,
effective tensors, and the homogenised convective Cahn-Hilliard equation.
"""

__version__ = "0.1.0"
