"""Models and simulations of a cyclic microwave single-photon counter.

Submodules: ``device`` (parameters and configs), ``analytics`` (closed-form
budgets), ``dynamics`` (converter integration), ``stochastic`` (Monte-Carlo
click traces), ``sweeps`` (sweeps, fits, projections) and ``cli``.
"""

__version__ = "0.1.0"
