"""Dissipative GHZ-state preparation on an NV-center 13C nuclear-spin register.

Submodules: ``qmath`` (operator algebra), ``channels`` (Kraus channels),
``spin_model`` (hyperfine register), ``pulse`` (CPMG gate compilation),
``protocol`` (pumping rounds), ``measurement`` (readout and tomography),
``estimation`` (hyperfine and polarization estimation), ``cli``.
"""

__version__ = "0.1.0"
