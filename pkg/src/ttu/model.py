"""Hierarchical censored-mixture log-posterior with analytic gradients.

Two normal time kernels with ordered means discriminate admitted from
non-admitted encounters through a censoring-aware log-likelihood ratio; the
observation log-odds combine the kernel evidence with baseline propensities
and a linear covariate term. Everything is expressed on an unconstrained
10-coordinate space so the sampler never sees a boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import PreparedDataset
from .special import LOG_SQRT_2PI, inv_logit, log_normal_sf, logit

try:
    from numba import njit as _njit
except ImportError:  # pure-numpy fallback path
    _njit = None

EPSILON = 1e-6


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def _likelihood_core_py(tU, tU2, yU, XU, yC, XC, yZ, XZ,
                        cU, B, D, cC, cZ, b0, b1, b2, b3):
    """Bernoulli log-likelihood plus every gradient reduction, vectorized.

    Returns (value, S0, S1, S2, S0C, A0, gb0..gb3): the moment sums of the
    uncensored residuals against [1, t, t^2], the censored and never-voided
    residual sums, and the four covariate gradient components.
    """
    beta = np.array([b0, b1, b2, b3])
    gU = XU @ beta
    gU += cU + B * tU + D * tU2
    gC = XC @ beta
    gC += cC
    gZ = XZ @ beta
    gZ += cZ
    value = (float(yU @ gU) - float(np.logaddexp(0.0, gU).sum())
             + float(yC @ gC) - float(np.logaddexp(0.0, gC).sum())
             + float(yZ @ gZ) - float(np.logaddexp(0.0, gZ).sum()))
    rU = yU - inv_logit(gU)
    rC = yC - inv_logit(gC)
    rZ = yZ - inv_logit(gZ)
    S0 = float(rU.sum())
    S1 = float(rU @ tU)
    S2 = float(rU @ tU2)
    S0C = float(rC.sum())
    A0 = float(rZ.sum())
    gb = XU.T @ rU + XC.T @ rC + XZ.T @ rZ
    return value, S0, S1, S2, S0C, A0, gb[0], gb[1], gb[2], gb[3]


if _njit is not None:
    # Fused single-pass variant. The caller guarantees finite inputs (the
    # transform guards reject coordinates that could overflow), so fastmath
    # reassociation is safe.
    @_njit(cache=True, fastmath=True)
    def _likelihood_core_jit(tU, tU2, yU, XU, yC, XC, yZ, XZ,
                             cU, B, D, cC, cZ, b0, b1, b2, b3):
        value = 0.0
        S0 = 0.0
        S1 = 0.0
        S2 = 0.0
        gb0 = 0.0
        gb1 = 0.0
        gb2 = 0.0
        gb3 = 0.0
        for i in range(tU.shape[0]):
            g = (cU + B * tU[i] + D * tU2[i] + XU[i, 0] * b0 + XU[i, 1] * b1
                 + XU[i, 2] * b2 + XU[i, 3] * b3)
            if g >= 0.0:
                e = np.exp(-g)
                sp = g + np.log1p(e)
                p = 1.0 / (1.0 + e)
            else:
                e = np.exp(g)
                sp = np.log1p(e)
                p = e / (1.0 + e)
            value += yU[i] * g - sp
            r = yU[i] - p
            S0 += r
            S1 += r * tU[i]
            S2 += r * tU2[i]
            gb0 += r * XU[i, 0]
            gb1 += r * XU[i, 1]
            gb2 += r * XU[i, 2]
            gb3 += r * XU[i, 3]
        S0C = 0.0
        for i in range(yC.shape[0]):
            g = (cC + XC[i, 0] * b0 + XC[i, 1] * b1 + XC[i, 2] * b2
                 + XC[i, 3] * b3)
            if g >= 0.0:
                e = np.exp(-g)
                sp = g + np.log1p(e)
                p = 1.0 / (1.0 + e)
            else:
                e = np.exp(g)
                sp = np.log1p(e)
                p = e / (1.0 + e)
            value += yC[i] * g - sp
            r = yC[i] - p
            S0C += r
            gb0 += r * XC[i, 0]
            gb1 += r * XC[i, 1]
            gb2 += r * XC[i, 2]
            gb3 += r * XC[i, 3]
        A0 = 0.0
        for i in range(yZ.shape[0]):
            g = (cZ + XZ[i, 0] * b0 + XZ[i, 1] * b1 + XZ[i, 2] * b2
                 + XZ[i, 3] * b3)
            if g >= 0.0:
                e = np.exp(-g)
                sp = g + np.log1p(e)
                p = 1.0 / (1.0 + e)
            else:
                e = np.exp(g)
                sp = np.log1p(e)
                p = e / (1.0 + e)
            value += yZ[i] * g - sp
            r = yZ[i] - p
            A0 += r
            gb0 += r * XZ[i, 0]
            gb1 += r * XZ[i, 1]
            gb2 += r * XZ[i, 2]
            gb3 += r * XZ[i, 3]
        return value, S0, S1, S2, S0C, A0, gb0, gb1, gb2, gb3
else:
    _likelihood_core_jit = None


PARAM_NAMES = [
    "eta0", "eta1", "mu0_raw", "delta_mu_raw", "log_sigma0", "log_sigma1",
    "beta_age", "beta_age_mis", "beta_sex", "beta_sex_mis",
]
BETA_NAMES = PARAM_NAMES[6:]
CONSTRAINED_NAMES = [
    "rho0", "rho1", "mu0", "mu1", "sigma0", "sigma1",
    "beta_age", "beta_age_mis", "beta_sex", "beta_sex_mis",
]


@dataclass(frozen=True)
class ModelConfig:
    """Fixed quantities the likelihood and priors depend on."""

    censor_limit_min: float = 300.0
    epsilon: float = EPSILON
    prior_t_mean: float = 120.0
    prior_scale: float = 60.0

    def __post_init__(self):
        if self.prior_scale < 1.0:
            raise ValueError("prior_scale must be >= 1")
        if self.censor_limit_min <= 0:
            raise ValueError("censor_limit_min must be > 0")

    @classmethod
    def from_dataset(cls, ds: PreparedDataset) -> "ModelConfig":
        t_voided = ds.t_min[ds.voided == 1]
        t_mean = float(np.mean(t_voided)) if t_voided.size else ds.censor_limit_min / 2.0
        return cls(censor_limit_min=ds.censor_limit_min, prior_t_mean=t_mean,
                   prior_scale=ds.t_scale_min)


@dataclass(frozen=True)
class UnconstrainedParams:
    eta0: float
    eta1: float
    mu0_raw: float
    delta_mu_raw: float
    log_sigma0: float
    log_sigma1: float
    beta_age: float = 0.0
    beta_age_mis: float = 0.0
    beta_sex: float = 0.0
    beta_sex_mis: float = 0.0

    def to_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in PARAM_NAMES])

    @classmethod
    def from_vector(cls, u) -> "UnconstrainedParams":
        u = np.asarray(u, dtype=float)
        if u.size == 6:
            return cls(*u)
        return cls(*u[:10])


@dataclass(frozen=True)
class ConstrainedParams:
    rho0: float
    rho1: float
    mu0: float
    mu1: float
    sigma0: float
    sigma1: float
    beta: np.ndarray  # (beta_age, beta_age_mis, beta_sex, beta_sex_mis)
    mu1_clamped: bool = False

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            [self.rho0, self.rho1, self.mu0, self.mu1, self.sigma0, self.sigma1],
            self.beta,
        ])


def constrain(u: UnconstrainedParams, cfg: ModelConfig) -> ConstrainedParams:
    """Map unconstrained coordinates to the model's natural parameter space.

    rho_k: inverse-logit with a saturating clamp to (eps, 1-eps); mu0: scaled
    inverse-logit onto (0, C); delta_mu: exp; mu1: hard min(mu0 + delta_mu, C);
    sigma_k: exp(log_sigma_k) + eps.
    """
    eps = cfg.epsilon
    C = cfg.censor_limit_min
    rho0 = float(np.clip(inv_logit(u.eta0), eps, 1.0 - eps))
    rho1 = float(np.clip(inv_logit(u.eta1), eps, 1.0 - eps))
    mu0 = C * float(inv_logit(u.mu0_raw))
    delta_mu = float(np.exp(u.delta_mu_raw))
    mu1_unclamped = mu0 + delta_mu
    clamped = mu1_unclamped >= C
    mu1 = C if clamped else mu1_unclamped
    sigma0 = float(np.exp(u.log_sigma0)) + eps
    sigma1 = float(np.exp(u.log_sigma1)) + eps
    beta = np.array([u.beta_age, u.beta_age_mis, u.beta_sex, u.beta_sex_mis])
    return ConstrainedParams(rho0=rho0, rho1=rho1, mu0=mu0, mu1=mu1,
                             sigma0=sigma0, sigma1=sigma1, beta=beta,
                             mu1_clamped=bool(clamped))


def log_likelihood_ratio_delta(t: float, c: int, p: ConstrainedParams,
                               cfg: ModelConfig) -> float:
    """Censoring-aware log-likelihood ratio of the two time kernels at (t, c)."""
    C = cfg.censor_limit_min
    if not 0.0 <= t <= C:
        raise ValueError(f"t must lie in [0, {C}], got {t}")
    if c:
        z1 = (C - p.mu1) / p.sigma1
        z0 = (C - p.mu0) / p.sigma0
        return float(log_normal_sf(z1) - log_normal_sf(z0))
    z1 = (t - p.mu1) / p.sigma1
    z0 = (t - p.mu0) / p.sigma0
    return float((-np.log(p.sigma1) - 0.5 * z1 * z1) - (-np.log(p.sigma0) - 0.5 * z0 * z0))


def linear_term(age_std, age_mis, sex01, sex_mis, beta) -> float:
    return float(beta[0] * age_std + beta[1] * age_mis + beta[2] * sex01 + beta[3] * sex_mis)


def observation_logit(t: float, c: int, m: int, age_std: float, age_mis: int,
                      sex01: int, sex_mis: int, p: ConstrainedParams,
                      cfg: ModelConfig) -> float:
    """Log-odds of admission for one fully observed encounter."""
    xb = linear_term(age_std, age_mis, sex01, sex_mis, p.beta)
    if m:
        delta = log_likelihood_ratio_delta(t, c, p, cfg)
        return float(np.log(p.rho1 / p.rho0) + delta + xb)
    return float(np.log((1.0 - p.rho1) / (1.0 - p.rho0)) + xb)


@dataclass(frozen=True)
class EvidenceState:
    """What is known about the patient's voiding at prediction time."""

    kind: str  # voided_at | voided_censored | not_yet | not_observed
    t_min: Optional[float] = None

    @classmethod
    def voided_at(cls, t_min: float) -> "EvidenceState":
        return cls("voided_at", float(t_min))

    @classmethod
    def voided_censored(cls) -> "EvidenceState":
        return cls("voided_censored")

    @classmethod
    def not_yet(cls, t_min: float) -> "EvidenceState":
        return cls("not_yet", float(t_min))

    @classmethod
    def not_observed(cls) -> "EvidenceState":
        return cls("not_observed")


def predict_logit_draws(state: EvidenceState, x: np.ndarray, theta: np.ndarray,
                        cfg: ModelConfig) -> np.ndarray:
    """Vectorized prediction log-odds over S constrained parameter draws.

    ``theta`` is an (S, 10) array in CONSTRAINED_NAMES order; ``x`` the
    4-vector (age_std, age_mis, sex01, sex_mis). The not_yet state scores the
    coherent "no void by elapsed t" evidence: each kernel contributes its
    point mass on never-voiding plus the survival mass beyond t.
    """
    C = cfg.censor_limit_min
    theta = np.atleast_2d(theta)
    rho0, rho1 = theta[:, 0], theta[:, 1]
    mu0, mu1 = theta[:, 2], theta[:, 3]
    sigma0, sigma1 = theta[:, 4], theta[:, 5]
    xb = theta[:, 6:] @ np.asarray(x, dtype=float)

    if state.kind == "not_observed":
        return np.log((1.0 - rho1) / (1.0 - rho0)) + xb

    if state.kind == "voided_censored":
        delta = (log_normal_sf((C - mu1) / sigma1) - log_normal_sf((C - mu0) / sigma0))
        return np.log(rho1 / rho0) + delta + xb

    t = state.t_min
    if t is None or not 0.0 <= t <= C:
        raise ValueError(f"state {state.kind!r} requires t_min in [0, {C}], got {t}")

    if state.kind == "voided_at":
        z1 = (t - mu1) / sigma1
        z0 = (t - mu0) / sigma0
        delta = (-np.log(sigma1) - 0.5 * z1 * z1) - (-np.log(sigma0) - 0.5 * z0 * z0)
        return np.log(rho1 / rho0) + delta + xb

    if state.kind == "not_yet":
        # log{(1-rho_k) + rho_k * Phi_bar((t-mu_k)/sigma_k)} per class, as a
        # stable log-sum-exp; 1-rho_k >= eps keeps the argument positive.
        num = np.logaddexp(np.log1p(-rho1), np.log(rho1) + log_normal_sf((t - mu1) / sigma1))
        den = np.logaddexp(np.log1p(-rho0), np.log(rho0) + log_normal_sf((t - mu0) / sigma0))
        return num - den + xb

    raise ValueError(f"unknown evidence state {state.kind!r}")


def predict_logit(state: EvidenceState, age_std: float, age_mis: int, sex01: int,
                  sex_mis: int, p: ConstrainedParams, cfg: ModelConfig) -> float:
    """Scalar prediction log-odds for one parameter draw."""
    x = np.array([age_std, age_mis, sex01, sex_mis], dtype=float)
    theta = p.to_vector()[None, :]
    return float(predict_logit_draws(state, x, theta, cfg)[0])


class TTUPosterior:
    """Callable log-posterior with exact analytic gradients.

    Evaluations are pure given the frozen dataset; independent chains may call
    the same instance concurrently. ``clamp_count`` tallies evaluations where
    the ordered-mean map saturated at the censor limit (a sampler health
    statistic, not part of the density).
    """

    def __init__(self, data: PreparedDataset, cfg: ModelConfig,
                 covariates: bool = True, use_jit: Optional[bool] = None):
        self.cfg = cfg
        self.covariates = covariates
        self.n_params = 10 if covariates else 6
        self.param_names = PARAM_NAMES[: self.n_params]
        self.clamp_count = 0
        if use_jit is None:
            use_jit = _likelihood_core_jit is not None
        if use_jit and _likelihood_core_jit is None:
            raise ValueError("numba is not available; cannot enable the JIT core")
        self._core = _likelihood_core_jit if use_jit else _likelihood_core_py

        # Rows regrouped once: uncensored voided (U), censored voided (Cs),
        # never voided (Z). The kernel log-ratio is quadratic in t, so the
        # per-evaluation work reduces to moment sums against fixed bases.
        m = data.voided.astype(bool)
        cen = data.censored.astype(bool)
        iU = m & ~cen
        iC = m & cen
        iZ = ~m
        self._yU = data.outcome[iU].astype(float)
        self._yC = data.outcome[iC].astype(float)
        self._yZ = data.outcome[iZ].astype(float)
        self._tU = data.t_min[iU]
        self._tU2 = self._tU * self._tU
        self._n = data.n
        X = data.covariates if covariates else np.zeros((data.n, 4))
        self._XU = np.ascontiguousarray(X[iU])
        self._XC = np.ascontiguousarray(X[iC])
        self._XZ = np.ascontiguousarray(X[iZ])

        # Prior location/scale pulled from the dataset summary.
        self._prior_sd_mu0 = 2.0 * cfg.prior_scale
        self._log_sigma_loc = float(np.log(cfg.prior_scale))
        # Truncation normalizer of the mu0 prior; constant in mu0 because the
        # bounds and the prior location are fixed.
        a = (0.0 - cfg.prior_t_mean) / self._prior_sd_mu0
        b = (cfg.censor_limit_min - cfg.prior_t_mean) / self._prior_sd_mu0
        self._log_trunc_norm = float(np.log(
            np.exp(log_normal_sf(a)) - np.exp(log_normal_sf(b))))
        # constants folded out of the per-evaluation prior terms; the mu0
        # block absorbs log(C) from its transform Jacobian
        self._mu0_prior_const = float(
            -np.log(self._prior_sd_mu0) - LOG_SQRT_2PI - self._log_trunc_norm
            + np.log(cfg.censor_limit_min))
        self._halfnorm_const = float(0.5 * np.log(2.0 / np.pi)
                                     - np.log(cfg.prior_scale))

    def initial_points(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-2.0, 2.0, size=self.n_params)

    def __call__(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        return self.value_and_grad(u)

    def value_and_grad(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return self._value_and_grad(u)

    def _value_and_grad(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        cfg = self.cfg
        eps = cfg.epsilon
        C = cfg.censor_limit_min
        u = np.asarray(u, dtype=float)
        eta0, eta1, mu0_raw, dmu_raw, ls0, ls1 = u[:6].tolist()
        if self.covariates:
            b0, b1, b2, b3 = u[6:10].tolist()
        else:
            b0 = b1 = b2 = b3 = 0.0

        # Leapfrog excursions can push coordinates far beyond any support; the
        # log-posterior out there is below float range, which the sampler
        # consumes as a divergent evaluation. The bound also keeps the fused
        # likelihood kernel free of inf/nan.
        bound = max(abs(eta0), abs(eta1), abs(mu0_raw), abs(dmu_raw),
                    abs(ls0), abs(ls1), abs(b0), abs(b1), abs(b2), abs(b3))
        if bound > 1e30 or not math.isfinite(bound):
            return -math.inf, np.zeros(self.n_params)

        # --- transforms ---
        rho0 = min(max(_sigmoid(eta0), eps), 1.0 - eps)
        rho1 = min(max(_sigmoid(eta1), eps), 1.0 - eps)
        s = _sigmoid(mu0_raw)
        if not 0.0 < s < 1.0:  # Jacobian log s + log(1-s) = -inf
            return -math.inf, np.zeros(self.n_params)
        mu0 = C * s
        delta_mu = _exp(dmu_raw)
        kappa = 0.0 if mu0 + delta_mu >= C else 1.0
        if kappa == 0.0:
            self.clamp_count += 1
        mu1 = min(mu0 + delta_mu, C)
        sig0 = _exp(ls0) + eps
        sig1 = _exp(ls1) + eps
        if not (sig0 < math.inf and sig1 < math.inf and delta_mu < 1e150):
            return -math.inf, np.zeros(self.n_params)

        # --- likelihood ---
        # kernel log-ratio as a quadratic in t: delta(t) = A + B t + D t^2
        inv0 = 1.0 / (sig0 * sig0)
        inv1 = 1.0 / (sig1 * sig1)
        D = 0.5 * (inv0 - inv1)
        B = mu1 * inv1 - mu0 * inv0
        A = (math.log(sig0) - math.log(sig1)
             + 0.5 * (mu0 * mu0 * inv0 - mu1 * mu1 * inv1))
        zC0 = (C - mu0) / sig0
        zC1 = (C - mu1) / sig1
        logsf0 = float(log_normal_sf(zC0))
        logsf1 = float(log_normal_sf(zC1))
        delta_cens = logsf1 - logsf0
        lr_rho = math.log(rho1) - math.log(rho0)
        lr_comp = math.log1p(-rho1) - math.log1p(-rho0)

        # Bernoulli log-likelihood straight from the logits (y*g minus
        # softplus), plus the moment reductions that carry all t-dependence
        # of the gradient.
        (value, S0, S1, S2, S0C, A0, gb0, gb1, gb2, gb3) = self._core(
            self._tU, self._tU2, self._yU, self._XU, self._yC, self._XC,
            self._yZ, self._XZ, lr_rho + A, B, D, lr_rho + delta_cens,
            lr_comp, b0, b1, b2, b3)
        A1 = S0 + S0C  # voided rows

        grad = np.empty(self.n_params)
        # hazards reuse the survival logs computed above
        h0 = _exp(-0.5 * zC0 * zC0 - LOG_SQRT_2PI - logsf0)
        h1 = _exp(-0.5 * zC1 * zC1 - LOG_SQRT_2PI - logsf1)
        # uncensored: sums of r*(t-mu)/sigma^2 and r*((t-mu)^2/sigma^2 - 1)/sigma
        dmu1 = inv1 * (S1 - mu1 * S0) + h1 / sig1 * S0C
        dmu0 = -(inv0 * (S1 - mu0 * S0) + h0 / sig0 * S0C)
        quad1 = S2 - 2.0 * mu1 * S1 + mu1 * mu1 * S0
        quad0 = S2 - 2.0 * mu0 * S1 + mu0 * mu0 * S0
        dsig1 = (inv1 * quad1 - S0) / sig1 + h1 * zC1 / sig1 * S0C
        dsig0 = -((inv0 * quad0 - S0) / sig0 + h0 * zC0 / sig0 * S0C)

        # --- priors (on the coordinates given above) + transform Jacobians ---
        value += -0.5 * (eta0 * eta0 + eta1 * eta1) - 2.0 * LOG_SQRT_2PI
        grad[0] = A0 * rho0 - A1 * (1.0 - rho0) - eta0
        grad[1] = -A0 * rho1 + A1 * (1.0 - rho1) - eta1

        z_mu0 = (mu0 - cfg.prior_t_mean) / self._prior_sd_mu0
        value += -0.5 * z_mu0 * z_mu0 + self._mu0_prior_const
        dmu0 += -z_mu0 / self._prior_sd_mu0
        # log-Jacobian of mu0 = C * inv_logit(mu0_raw)
        value += math.log(s) + math.log1p(-s)
        jac_mu0_raw = 1.0 - 2.0 * s

        scale = cfg.prior_scale
        q = delta_mu / scale
        value += self._halfnorm_const - 0.5 * q * q
        ddelta = -delta_mu / (scale * scale)
        # log-Jacobian of delta_mu = exp(delta_mu_raw)
        value += dmu_raw

        d0 = ls0 - self._log_sigma_loc
        d1 = ls1 - self._log_sigma_loc
        value += -0.5 * (d0 * d0 + d1 * d1) - 2.0 * LOG_SQRT_2PI

        if self.covariates:
            value += (-0.5 * (b0 * b0 + b1 * b1 + b2 * b2 + b3 * b3)
                      - 4.0 * LOG_SQRT_2PI)
            grad[6] = gb0 - b0
            grad[7] = gb1 - b1
            grad[8] = gb2 - b2
            grad[9] = gb3 - b3

        # --- chain rule back to the unconstrained coordinates ---
        dmu0_draw = C * s * (1.0 - s)
        grad[2] = (dmu0 + kappa * dmu1) * dmu0_draw + jac_mu0_raw
        grad[3] = kappa * dmu1 * delta_mu + ddelta * delta_mu + 1.0
        grad[4] = dsig0 * (sig0 - eps) - d0
        grad[5] = dsig1 * (sig1 - eps) - d1

        return value, grad


def log_posterior_with_grad(u, data: PreparedDataset, cfg: ModelConfig,
                            covariates: bool = True) -> tuple[float, np.ndarray]:
    """One-shot evaluation; build a TTUPosterior directly for repeated calls."""
    if isinstance(u, UnconstrainedParams):
        u = u.to_vector()[: (10 if covariates else 6)]
    return TTUPosterior(data, cfg, covariates=covariates).value_and_grad(u)


def constrained_from_vector(u: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Map an (S, P) unconstrained draw matrix to (S, 10) constrained rows."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    S, P = u.shape
    eps = cfg.epsilon
    C = cfg.censor_limit_min
    out = np.zeros((S, 10))
    out[:, 0] = np.clip(inv_logit(u[:, 0]), eps, 1.0 - eps)
    out[:, 1] = np.clip(inv_logit(u[:, 1]), eps, 1.0 - eps)
    out[:, 2] = C * inv_logit(u[:, 2])
    out[:, 3] = np.minimum(out[:, 2] + np.exp(u[:, 3]), C)
    out[:, 4] = np.exp(u[:, 4]) + eps
    out[:, 5] = np.exp(u[:, 5]) + eps
    if P == 10:
        out[:, 6:] = u[:, 6:]
    return out
