"""Synthetic cohort generation consistent with the discriminative likelihood,
plus simulation-based calibration of the whole inference pipeline.

Cohorts condition on realized (m, t, x) and draw the outcome from the model's
own log-odds, so the fitted likelihood is correctly specified regardless of
the time marginal. For SBC the time marginal must NOT depend on the parameter
draw (the fit ignores any t|theta information), so the harness generates
times from a fixed reference kernel pair.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .data import PatientRecord, PreparedDataset, prepare_dataset
from .model import (
    ConstrainedParams,
    ModelConfig,
    TTUPosterior,
    UnconstrainedParams,
    constrain,
)
from .nuts import SamplerConfig, SamplingError, nuts_sample
from .predictive import observation_logit_matrix
from .special import inv_logit, logit

AGE_LOCATION = 74.0  # cohort median age
AGE_SCALE = 20.0


@dataclass(frozen=True)
class SimConfig:
    n: int
    theta_true: ConstrainedParams
    void_rate: float = 0.7
    t_mixture_weight: float = 0.5
    age_missing_rate: float = 0.05
    sex_missing_rate: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        for name in ("void_rate", "t_mixture_weight", "age_missing_rate",
                     "sex_missing_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


def _truncated_normal(rng, loc, scale, size) -> np.ndarray:
    """Rejection-sampled Normal(loc, scale) conditioned on >= 0."""
    out = np.empty(size)
    todo = np.arange(size)
    while todo.size:
        cand = rng.normal(loc, scale, todo.size)
        ok = cand >= 0.0
        out[todo[ok]] = cand[ok]
        todo = todo[~ok]
    return out


def generate_cohort(cfg: SimConfig, model_cfg: Optional[ModelConfig] = None,
                    theta_t: Optional[ConstrainedParams] = None) -> list[PatientRecord]:
    """Draw a synthetic cohort; outcomes follow the model's log-odds at
    ``cfg.theta_true`` given the realized evidence.

    ``theta_t`` overrides the kernels used for the time marginal (needed by
    SBC); by default times come from ``theta_true``'s kernels.
    """
    model_cfg = model_cfg or ModelConfig()
    theta_t = theta_t or cfg.theta_true
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n

    age = _truncated_normal(rng, AGE_LOCATION, AGE_SCALE, n)
    age_missing = rng.uniform(size=n) < cfg.age_missing_rate
    sex_m = rng.uniform(size=n) < 0.5
    sex_missing = rng.uniform(size=n) < cfg.sex_missing_rate
    voided = rng.uniform(size=n) < cfg.void_rate

    t_raw = np.full(n, np.nan)
    idx_v = np.flatnonzero(voided)
    if idx_v.size:
        use_late = rng.uniform(size=idx_v.size) >= cfg.t_mixture_weight
        loc = np.where(use_late, theta_t.mu1, theta_t.mu0)
        scl = np.where(use_late, theta_t.sigma1, theta_t.sigma0)
        draws = np.empty(idx_v.size)
        todo = np.arange(idx_v.size)
        while todo.size:
            cand = rng.normal(loc[todo], scl[todo])
            ok = cand >= 0.0
            draws[todo[ok]] = cand[ok]
            todo = todo[~ok]
        t_raw[idx_v] = draws

    records = [
        PatientRecord(
            id=f"s{i}",
            voided=bool(voided[i]),
            ttu_raw_min=None if not voided[i] else float(t_raw[i]),
            age_years=None if age_missing[i] else float(age[i]),
            sex=None if sex_missing[i] else ("M" if sex_m[i] else "F"),
            admitted=False,
        )
        for i in range(n)
    ]

    prepared = prepare_dataset(records, model_cfg.censor_limit_min)
    logits = _cohort_logits(prepared, cfg.theta_true, model_cfg)
    y = rng.uniform(size=n) < inv_logit(logits)

    from dataclasses import replace
    return [replace(r, admitted=bool(y[i])) for i, r in enumerate(records)]


def _cohort_logits(data: PreparedDataset, theta: ConstrainedParams,
                   cfg: ModelConfig) -> np.ndarray:
    theta_row = theta.to_vector()[None, :]
    xb = data.covariates @ theta.beta
    out = np.log((1 - theta.rho1) / (1 - theta.rho0)) + xb
    m = data.voided == 1
    if m.any():
        out[m] = observation_logit_matrix(
            theta_row, data.t_min[m], data.censored[m], data.covariates[m], cfg)[0]
    return out


# ---------------------------------------------------------------------------
# Prior sampling and SBC
# ---------------------------------------------------------------------------

def draw_prior(rng: np.random.Generator, cfg: ModelConfig,
               covariates: bool = True) -> np.ndarray:
    """One unconstrained parameter vector distributed per the model prior."""
    C = cfg.censor_limit_min
    scale = cfg.prior_scale
    eta = rng.normal(size=2)
    mu0 = None
    while mu0 is None:
        cand = rng.normal(cfg.prior_t_mean, 2.0 * scale)
        if 0.0 < cand < C:
            mu0 = cand
    delta = abs(rng.normal(0.0, scale))
    log_sig = rng.normal(np.log(scale), 1.0, size=2)
    u = [eta[0], eta[1], float(logit(mu0 / C)), float(np.log(delta)),
         log_sig[0], log_sig[1]]
    if covariates:
        u.extend(rng.normal(size=4))
    return np.array(u)


@dataclass
class SbcResult:
    param_names: list
    ranks: np.ndarray  # [replications, P]
    n_posterior: int  # thinned posterior size L; ranks in 0..L
    p_values: Optional[np.ndarray]
    failures: int

    def as_dict(self) -> dict:
        return {
            "param_names": list(self.param_names),
            "ranks": self.ranks.tolist(),
            "n_posterior": int(self.n_posterior),
            "p_values": None if self.p_values is None else
            [float(v) for v in self.p_values],
            "failures": int(self.failures),
        }


def sbc_rank_pvalues(ranks: np.ndarray, n_posterior: int,
                     bins: int = 10) -> np.ndarray:
    """Chi-square uniformity p-value of each parameter's rank distribution."""
    R, P = ranks.shape
    edges = np.linspace(0, n_posterior + 1, bins + 1)
    out = np.empty(P)
    for j in range(P):
        counts = np.histogram(ranks[:, j] + 0.5, bins=edges)[0]
        out[j] = stats.chisquare(counts).pvalue
    return out


def sbc_run(prior_draws: int, n_per_fit: int, sampler_cfg: SamplerConfig,
            seed: int = 0, model_cfg: Optional[ModelConfig] = None,
            covariates: bool = True, thin_to: int = 99,
            gradient_flip: bool = False) -> SbcResult:
    """Simulation-based calibration of prior + likelihood + sampler.

    Per replication: draw parameters from the prior, simulate a cohort whose
    times come from fixed reference kernels (independent of the draw), fit,
    and record the rank of the true unconstrained coordinates in the thinned
    posterior. Ranks are uniform when the pipeline is exact.

    ``gradient_flip`` negates the gradient fed to the sampler; it exists as a
    negative-control fixture and must wreck rank uniformity.
    """
    if prior_draws < 1:
        raise ValueError("prior_draws must be >= 1")
    if prior_draws == 1:
        warnings.warn("single SBC replication: ranks carry no uniformity test")
    model_cfg = model_cfg or ModelConfig()
    P = 10 if covariates else 6

    # fixed reference kernels for the time marginal
    theta_t = ConstrainedParams(rho0=0.5, rho1=0.5, mu0=90.0, mu1=180.0,
                                sigma0=50.0, sigma1=60.0, beta=np.zeros(4))

    rng = np.random.default_rng(seed)
    ranks = []
    failures = 0
    for rep in range(prior_draws):
        u_true = draw_prior(rng, model_cfg, covariates)
        theta_true = constrain(UnconstrainedParams.from_vector(u_true), model_cfg)
        sim = SimConfig(n=n_per_fit, theta_true=theta_true,
                        seed=int(rng.integers(2**31)))
        records = generate_cohort(sim, model_cfg, theta_t=theta_t)
        data = prepare_dataset(records, model_cfg.censor_limit_min)
        target = TTUPosterior(data, model_cfg, covariates=covariates)
        if gradient_flip:
            inner = target

            class _Flipped:
                n_params = inner.n_params
                param_names = inner.param_names

                def __call__(self, u):
                    v, g = inner.value_and_grad(u)
                    return v, -g

            target = _Flipped()
        cfg_rep = SamplerConfig(
            chains=sampler_cfg.chains, warmup=sampler_cfg.warmup,
            draws=sampler_cfg.draws, target_accept=sampler_cfg.target_accept,
            max_treedepth=sampler_cfg.max_treedepth,
            seed=int(rng.integers(2**31)))
        try:
            draws = nuts_sample(target, cfg_rep)
        except SamplingError:
            failures += 1
            continue
        flat = draws.flat()
        L = min(thin_to, flat.shape[0])
        idx = (np.arange(L) * flat.shape[0]) // L  # L distinct evenly spaced rows
        ranks.append((flat[idx] < u_true[None, :]).sum(axis=0))

    if failures > 0.10 * prior_draws:
        raise RuntimeError(
            f"SBC harness: {failures}/{prior_draws} fits failed (> 10%)")

    ranks = np.array(ranks, dtype=int)
    pvals = sbc_rank_pvalues(ranks, thin_to) if ranks.shape[0] >= 20 else None
    from .model import PARAM_NAMES
    return SbcResult(param_names=PARAM_NAMES[:P], ranks=ranks,
                     n_posterior=thin_to, p_values=pvals, failures=failures)


def credible_interval_coverage(draws_constrained: np.ndarray,
                               theta_true: ConstrainedParams,
                               level: float = 0.95) -> dict:
    """Whether each identified quantity's equal-tailed interval covers truth.

    The baseline propensities enter the likelihood only through the two
    log-odds contrasts, so coverage is asserted on the contrasts rather than
    on rho0/rho1 individually.
    """
    alpha = (1.0 - level) / 2.0
    qs = [alpha, 1.0 - alpha]
    th = draws_constrained

    quantities = {
        "log_rho_ratio": (np.log(th[:, 1] / th[:, 0]),
                          np.log(theta_true.rho1 / theta_true.rho0)),
        "log_comp_ratio": (np.log((1 - th[:, 1]) / (1 - th[:, 0])),
                           np.log((1 - theta_true.rho1) / (1 - theta_true.rho0))),
        "mu0": (th[:, 2], theta_true.mu0),
        "mu1": (th[:, 3], theta_true.mu1),
        "sigma0": (th[:, 4], theta_true.sigma0),
        "sigma1": (th[:, 5], theta_true.sigma1),
        "beta_age": (th[:, 6], theta_true.beta[0]),
        "beta_age_mis": (th[:, 7], theta_true.beta[1]),
        "beta_sex": (th[:, 8], theta_true.beta[2]),
        "beta_sex_mis": (th[:, 9], theta_true.beta[3]),
    }
    out = {}
    for name, (series, truth) in quantities.items():
        lo, hi = np.quantile(series, qs)
        out[name] = bool(lo <= truth <= hi)
    return out
