"""farcast: hierarchical Bayesian functional autoregression for sparsely
observed curve time series, with forecasting, interpolation, lag averaging,
a simulation laboratory, rival forecasters, and a yield-curve study CLI."""

__version__ = "0.1.0"
