import numpy as np
import pytest

from ttu.data import PatientRecord, prepare_dataset
from ttu.model import ModelConfig


def synthetic_draws(u_matrix, chains=2, seed=0):
    """Wrap handcrafted unconstrained rows as healthy-looking PosteriorDraws
    (iid energies, no divergences); persistence and serving code do not care
    how draws were produced."""
    from ttu.model import PARAM_NAMES
    from ttu.nuts import PosteriorDraws, SamplerConfig

    rng = np.random.default_rng(seed)
    u = np.asarray(u_matrix, dtype=float)
    S, P = u.shape
    per = S // chains
    u = u[: per * chains].reshape(chains, per, P)
    return PosteriorDraws(
        param_names=PARAM_NAMES[:P],
        unconstrained=u,
        energy=rng.standard_normal((chains, per)) + 50.0,
        accept_prob=np.full((chains, per), 0.9),
        tree_depth=np.full((chains, per), 3, dtype=np.int16),
        divergent=np.zeros((chains, per), dtype=bool),
        step_size=np.full(chains, 0.4),
        mass_diag=np.ones((chains, P)),
        config=SamplerConfig(chains=chains, warmup=100, draws=per, seed=seed),
    )


def synthetic_bundle(out_dir, symmetric=False, n_data=80, S=400, seed=3):
    """Write a healthy bundle around handcrafted draws.

    With ``symmetric=True`` every draw ties the class parameters together
    (equal propensities, identical kernels, zero coefficients), so every
    prediction is exactly 0.5.
    """
    from ttu.bundle import write_bundle
    from ttu.diagnostics import compute_diagnostics
    from ttu.model import ConstrainedParams
    from ttu.nuts import SamplerConfig
    from ttu.predictive import cumulative_curve
    from ttu.simulate import SimConfig, generate_cohort

    rng = np.random.default_rng(seed)
    theta = ConstrainedParams(rho0=0.35, rho1=0.60, mu0=80.0, mu1=200.0,
                              sigma0=40.0, sigma1=50.0,
                              beta=np.array([0.5, -0.3, 0.4, 0.2]))
    records = generate_cohort(SimConfig(n=n_data, theta_true=theta, seed=seed))
    data = prepare_dataset(records)
    cfg = ModelConfig.from_dataset(data)

    u = np.empty((S, 10))
    if symmetric:
        eta = rng.normal(0.0, 0.3, S)
        ls = rng.normal(np.log(50.0), 0.1, S)
        u[:, 0] = u[:, 1] = eta
        u[:, 2] = rng.normal(0.0, 0.2, S)
        u[:, 3] = -40.0  # delta_mu below float resolution: mu1 == mu0
        u[:, 4] = u[:, 5] = ls
        u[:, 6:] = 0.0
    else:
        u[:, 0] = rng.normal(-0.6, 0.2, S)
        u[:, 1] = rng.normal(0.4, 0.2, S)
        u[:, 2] = rng.normal(-1.0, 0.15, S)
        u[:, 3] = rng.normal(np.log(120.0), 0.1, S)
        u[:, 4] = rng.normal(np.log(40.0), 0.08, S)
        u[:, 5] = rng.normal(np.log(50.0), 0.08, S)
        u[:, 6:] = rng.normal(0.0, 0.1, (S, 4))
    draws = synthetic_draws(u, chains=2, seed=seed)
    report = compute_diagnostics(draws)
    curve = cumulative_curve(draws, data, cfg)
    sampler_cfg = draws.config
    return write_bundle(out_dir, data, cfg, sampler_cfg, draws, report, curve)


def make_records(seed, n=50, void_rate=0.7, admit_rate=0.4):
    """Small random cohort with missingness and censoring, for unit tests."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        voided = bool(rng.uniform() < void_rate)
        t = float(rng.uniform(5, 400)) if voided else None
        age = float(rng.uniform(20, 95)) if rng.uniform() < 0.9 else None
        sex = None if rng.uniform() < 0.1 else ("M" if rng.uniform() < 0.5 else "F")
        records.append(PatientRecord(
            id=f"p{i}", voided=voided, ttu_raw_min=t, age_years=age, sex=sex,
            admitted=bool(rng.uniform() < admit_rate)))
    return records


def prior_plausible_point(rng, cfg):
    """Unconstrained coordinates with kernel widths near the data scale, so
    finite differences of the log-posterior stay well conditioned."""
    u = rng.normal(size=10)
    u[3] = np.log(50.0) + 0.5 * rng.normal()
    u[4] = np.log(cfg.prior_scale) + 0.3 * rng.normal()
    u[5] = np.log(cfg.prior_scale) + 0.3 * rng.normal()
    return u


@pytest.fixture
def small_dataset():
    return prepare_dataset(make_records(7))


@pytest.fixture
def small_config(small_dataset):
    return ModelConfig.from_dataset(small_dataset)
