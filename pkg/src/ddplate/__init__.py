"""Mixed finite elements for fourth-order plate bending.

A symmetric H(divdiv)-conforming stress space paired with a discontinuous
deflection space, with residual error estimation and adaptive newest vertex
bisection.
"""

__version__ = "0.1.0"
