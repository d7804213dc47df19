"""Numerically stable scalar/vector primitives shared by the likelihood code.

Everything here must stay accurate for standardized arguments out to |z| ~ 38,
which is where float64 normal tail probabilities underflow.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_ndtr

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def log_normal_sf(z):
    """log of the standard normal survival function, stable on |z| <= 38.

    Routed through the erfc-based log-CDF (``log_ndtr``), which switches to an
    asymptotic expansion for large arguments.
    """
    return log_ndtr(-np.asarray(z, dtype=float))


def log_normal_pdf(z):
    """log of the standard normal density."""
    z = np.asarray(z, dtype=float)
    return -0.5 * z * z - LOG_SQRT_2PI


def normal_hazard(z):
    """phi(z) / Phi_bar(z), the standard normal hazard (inverse Mills ratio)."""
    return np.exp(log_normal_pdf(z) - log_normal_sf(z))


def inv_logit(x):
    """Logistic sigmoid."""
    return expit(x)


def logit(p):
    """Inverse of ``inv_logit``; caller is responsible for p in (0, 1)."""
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def bernoulli_loglik(logit_p, y):
    """Bernoulli log-likelihood evaluated directly from the logit.

    Computed as y*logit - softplus(logit); never forms the probability, so
    there is no cancellation for extreme logits.
    """
    logit_p = np.asarray(logit_p, dtype=float)
    y = np.asarray(y, dtype=float)
    return y * logit_p - softplus(logit_p)
