"""surgekit: post-outage load-surge analysis toolkit.

Submodules
----------
synth       synthetic city and outage-event generator
metrics     per-event surge ratios and DER reconnection quadrature
empirics    tail statistics, bootstrap band comparisons, threshold analysis
causal      honest causal forest for penetration effects
estimator   multi-task transformer surge estimator (pure numpy)
projection  Monte Carlo restoration-schedule surge projection
mitigation  staggered-restart, setpoint and DER soft-start counterfactuals
cli         command-line pipeline driver
"""

__version__ = "0.1.0"
