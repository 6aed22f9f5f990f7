"""Classical Calogero-Moser systems with internal degrees of freedom.

Exact matrix flows (:mod:`cmflow.flows`) act as oracles for the reduced
ODE integrations (:mod:`cmflow.reduced`); :mod:`cmflow.gauge`,
:mod:`cmflow.vectorial` and :mod:`cmflow.reach` classify the coupling
matrix L and the set of L reachable from a given start.
"""
from ._accel import backend

__version__ = "0.1.0"

__all__ = ["backend", "__version__"]
