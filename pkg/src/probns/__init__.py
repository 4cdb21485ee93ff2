"""Monte Carlo representation of 3D Navier-Stokes vorticity and its building blocks."""

__version__ = "0.1.0"
