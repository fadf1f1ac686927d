"""2D H(curl)-conforming finite element solver for incompressible MHD.

Velocity and magnetic field are both discretized with Nedelec elements of the
second kind; the pressure lives in a continuous Lagrange space one degree
higher.  Three stabilized formulations (interior-penalty jump stabilization,
a magnetically stabilized variant with a Lagrange multiplier, and a
gradient/curl-jump variant) plus an unstabilized baseline are integrated in
time with the implicit midpoint rule.
"""

__version__ = "0.1.0"
