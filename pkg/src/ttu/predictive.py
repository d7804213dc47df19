"""Posterior-predictive quantities: per-patient probability summaries and the
cumulative admission curve with pointwise credible bands."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import PreparedDataset
from .model import EvidenceState, ModelConfig, constrained_from_vector, predict_logit_draws
from .nuts import PosteriorDraws
from .special import inv_logit, log_normal_sf

_CHUNK = 512


class PredictiveError(ValueError):
    pass


def constrained_draws(draws: PosteriorDraws, cfg: ModelConfig) -> np.ndarray:
    """Pooled (S, 10) constrained parameter matrix for a sampling run."""
    return draws.constrained(lambda flat: constrained_from_vector(flat, cfg))


def patient_probability(draws: PosteriorDraws, cfg: ModelConfig,
                        state: EvidenceState, age_std: float = 0.0,
                        age_mis: int = 1, sex01: int = 0, sex_mis: int = 1,
                        level: float = 0.95) -> tuple[float, float, float]:
    """Posterior mean and equal-tailed interval of the admission probability
    for one patient under ``state``."""
    theta = constrained_draws(draws, cfg)
    x = np.array([age_std, age_mis, sex01, sex_mis], dtype=float)
    probs = inv_logit(predict_logit_draws(state, x, theta, cfg))
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(probs, [alpha, 1.0 - alpha])
    return float(probs.mean()), float(lo), float(hi)


def observation_logit_matrix(theta: np.ndarray, t: np.ndarray, c: np.ndarray,
                             X: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """(S, n) log-odds for voided rows at their observed (t, c) evidence."""
    C = cfg.censor_limit_min
    rho0, rho1 = theta[:, 0:1], theta[:, 1:2]
    mu0, mu1 = theta[:, 2:3], theta[:, 3:4]
    s0, s1 = theta[:, 4:5], theta[:, 5:6]
    zt0 = (t[None, :] - mu0) / s0
    zt1 = (t[None, :] - mu1) / s1
    delta_density = (np.log(s0) - np.log(s1)) + 0.5 * (zt0 * zt0 - zt1 * zt1)
    delta_surv = (log_normal_sf((C - mu1) / s1) - log_normal_sf((C - mu0) / s0))
    delta = np.where(c[None, :] == 1, delta_surv, delta_density)
    return np.log(rho1 / rho0) + delta + theta[:, 6:] @ X.T


@dataclass
class CumulativeCurve:
    grid_min: np.ndarray
    observed: np.ndarray
    posterior_mean: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray
    level: float
    n1: int
    denominator: str = "n1"
    dataset_digest: str = ""

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_min", "observed", "post_mean", "band_low", "band_high"])
            for i in range(len(self.grid_min)):
                writer.writerow([format(v, ".17g") for v in (
                    self.grid_min[i], self.observed[i], self.posterior_mean[i],
                    self.band_low[i], self.band_high[i])])

    def sidecar(self) -> dict:
        return {"level": self.level, "n1": self.n1,
                "denominator": self.denominator,
                "dataset_digest": self.dataset_digest}

    def to_json_sidecar(self, path) -> None:
        Path(path).write_text(json.dumps(self.sidecar(), indent=2))

    @classmethod
    def from_csv(cls, csv_path, sidecar_path) -> "CumulativeCurve":
        rows = []
        with Path(csv_path).open(newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append([float(row[k]) for k in
                             ("t_min", "observed", "post_mean", "band_low", "band_high")])
        arr = np.array(rows)
        meta = json.loads(Path(sidecar_path).read_text())
        return cls(grid_min=arr[:, 0], observed=arr[:, 1], posterior_mean=arr[:, 2],
                   band_low=arr[:, 3], band_high=arr[:, 4], level=meta["level"],
                   n1=meta["n1"], denominator=meta.get("denominator", "n1"),
                   dataset_digest=meta.get("dataset_digest", ""))


def default_grid(censor_limit_min: float = 300.0) -> np.ndarray:
    return np.arange(0.0, censor_limit_min + 1.0, 1.0)


def cumulative_curve(draws: PosteriorDraws, data: PreparedDataset,
                     cfg: ModelConfig, grid: Optional[np.ndarray] = None,
                     level: float = 0.95,
                     denominator: str = "n1") -> CumulativeCurve:
    """Observed vs posterior cumulative admission proportion on a time grid.

    Both curves accumulate voided patients with t_i <= t; the observed curve
    steps on outcomes, the model curve on per-draw probabilities at each
    patient's realized evidence. Both are normalized by the voided count
    (``denominator="n"`` switches to the full cohort size).
    """
    if grid is None:
        grid = default_grid(cfg.censor_limit_min)
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0) or grid[0] < 0 or grid[-1] > cfg.censor_limit_min:
        raise PredictiveError("grid must be ascending within [0, C]")

    m = data.voided == 1
    n1 = int(m.sum())
    if n1 == 0:
        raise PredictiveError("no voided patients")
    denom = n1 if denominator == "n1" else data.n

    t = data.t_min[m]
    c = data.censored[m]
    y = data.outcome[m].astype(float)
    X = data.covariates[m]

    order = np.argsort(t, kind="stable")
    t_sorted = t[order]
    pos = np.searchsorted(t_sorted, grid, side="right")

    obs_csum = np.concatenate([[0.0], np.cumsum(y[order])])
    observed = obs_csum[pos] / denom

    theta = constrained_draws(draws, cfg)
    S = theta.shape[0]
    curves = np.empty((S, grid.size))
    for start in range(0, S, _CHUNK):
        block = theta[start:start + _CHUNK]
        logits = observation_logit_matrix(block, t, c, X, cfg)
        p = inv_logit(logits)[:, order]
        csum = np.concatenate([np.zeros((block.shape[0], 1)), np.cumsum(p, axis=1)],
                              axis=1)
        curves[start:start + _CHUNK] = csum[:, pos] / denom

    alpha = (1.0 - level) / 2.0
    band_low, band_high = np.quantile(curves, [alpha, 1.0 - alpha], axis=0)
    return CumulativeCurve(
        grid_min=grid,
        observed=observed,
        posterior_mean=curves.mean(axis=0),
        band_low=band_low,
        band_high=band_high,
        level=level,
        n1=n1,
        denominator=denominator,
        dataset_digest=data.digest(),
    )


def model_curve_at_theta(theta_row: np.ndarray, data: PreparedDataset,
                         cfg: ModelConfig, grid: np.ndarray,
                         denominator: str = "n1") -> np.ndarray:
    """Cumulative model curve for a single constrained parameter vector
    (used to score band coverage of a known-truth curve)."""
    m = data.voided == 1
    n1 = int(m.sum())
    denom = n1 if denominator == "n1" else data.n
    t = data.t_min[m]
    c = data.censored[m]
    X = data.covariates[m]
    logits = observation_logit_matrix(theta_row[None, :], t, c, X, cfg)[0]
    p = inv_logit(logits)
    order = np.argsort(t, kind="stable")
    pos = np.searchsorted(t[order], np.asarray(grid, dtype=float), side="right")
    csum = np.concatenate([[0.0], np.cumsum(p[order])])
    return csum[pos] / denom
