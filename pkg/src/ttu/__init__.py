"""Sequential Bayesian admission-risk engine driven by time to first urination."""

__version__ = "0.1.0"
