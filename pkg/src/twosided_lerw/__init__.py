"""Numerical toolkit for the two-sided loop-erased random walk on Z^2 and Z^3.

Modules: ``lattice`` (balls, paths, loop erasure), ``potential`` (potential
kernel, Green functions, escape), ``loops`` (loop measure and soups),
``lerw`` (one-sided measure and samplers), ``twosided`` (tilted pair
measure), ``coupling``, ``excursion``, ``escape``, and ``experiments``
(registry and runner behind the ``twosided-lerw`` command).
"""

__version__ = "0.1.0"
