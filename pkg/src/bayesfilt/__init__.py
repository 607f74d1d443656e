"""Online Bayesian filtering: Kalman-family filters, changepoint-adaptive
priors, outlier-robust updates, and scalable high-dimensional variants."""

__version__ = "0.1.0"
