"""Derivative-free trust-region optimization with Gaussian-process surrogates.

Subpackages and modules: :mod:`gptr.kernel` and :mod:`gptr.gp` (the GP
surrogate), :mod:`gptr.certification` (full-linearity checks),
:mod:`gptr.trust_region` (the optimizer), :mod:`gptr.baselines` (local
polynomial models), :mod:`gptr.problems` (analytic suite and the semi-batch
reactor) and :mod:`gptr.runner` (configs, experiments and the ``gptr`` CLI).
"""

__version__ = "0.1.0"
