"""Numerical laboratory for interface motion in a one-dimensional
stochastic Allen-Cahn equation driven by mollified half-derivative noise.

The package is organized in layers:

* :mod:`kinklab.grid` -- periodic spectral grids, Fourier multipliers,
  2-D tensor kernels.
* :mod:`kinklab.fracderiv` -- singular-integral representation of the
  half-derivative and fractional product rules.
* :mod:`kinklab.wave` -- traveling-wave profile, its linearization and
  distance to the wave manifold.
* :mod:`kinklab.flow` -- deterministic flow, limiting-phase functional
  zeta and its first two derivatives.
* :mod:`kinklab.field` -- stationary Gaussian field, renormalization
  variance and Wick powers.
* :mod:`kinklab.spde` -- renormalized SPDE stepping, rescaling and
  stopping monitor.
* :mod:`kinklab.interface` -- interface drift/diffusion constants,
  drift estimators and the limiting SDE.
* :mod:`kinklab.config`, :mod:`kinklab.records`, :mod:`kinklab.harness`,
  :mod:`kinklab.cli` -- experiment configuration, run records and the
  command-line harness.
"""

__version__ = "0.1.0"
