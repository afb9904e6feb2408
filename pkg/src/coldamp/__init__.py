"""Cold-damping feedback cooling of a trapped ion under continuous homodyne measurement.

Modules: ``fock`` (truncated operators), ``params`` (parameter sets),
``sme`` and ``gaussian`` (conditioned trajectory engines), ``circuit``
(feedback loop), ``moments`` (closed-form steady state and averaged master
equation), ``spectra`` (photocurrent spectra) and ``cli``.
"""

__version__ = "0.1.0"
