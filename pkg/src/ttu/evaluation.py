"""Scoring: cumulative-curve goodness of fit, landmark discrimination and
calibration, logistic recalibration, decision curves, and jitter robustness."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .data import PreparedDataset
from .model import EvidenceState, ModelConfig
from .nuts import PosteriorDraws
from .predictive import CumulativeCurve, constrained_draws, observation_logit_matrix
from .special import inv_logit, log_normal_sf, logit

LANDMARKS_MIN = (60.0, 120.0, 180.0, 240.0, 300.0)
PROB_CLAMP = 1e-9
_CHUNK = 512


class EvaluationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Cumulative-curve goodness of fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GofReport:
    ise: float
    rmse_time: float
    ks: float
    cvm: float
    abc: float
    iae: float
    coverage: float
    avg_band_width: float

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in
                ("ise", "rmse_time", "ks", "cvm", "abc", "iae", "coverage",
                 "avg_band_width")}


def gof_metrics(curve: CumulativeCurve) -> GofReport:
    """Time-integrated discrepancy between posterior-mean and observed curves.

    Squared metrics integrate over normalized time t/C (trapezoid); the
    absolute-area pair (ABC = IAE by construction) integrates in minutes.
    """
    grid = curve.grid_min
    if grid.size < 2:
        raise EvaluationError("grid must have at least 2 points")
    d = curve.posterior_mean - curve.observed
    span = grid[-1] - grid[0]
    tau = (grid - grid[0]) / span
    ise = float(np.trapezoid(d * d, tau))
    abs_area_min = float(np.trapezoid(np.abs(d), grid))
    inside = (curve.observed >= curve.band_low) & (curve.observed <= curve.band_high)
    return GofReport(
        ise=ise,
        rmse_time=float(np.sqrt(np.mean(d * d))),
        ks=float(np.max(np.abs(d))),
        cvm=ise,
        abc=abs_area_min,
        iae=abs_area_min,
        coverage=float(np.mean(inside)),
        avg_band_width=float(np.mean(curve.band_high - curve.band_low)),
    )


# ---------------------------------------------------------------------------
# Landmark evidence states and probabilities
# ---------------------------------------------------------------------------

def landmark_states(data: PreparedDataset, t: float,
                    cfg: ModelConfig) -> list[EvidenceState]:
    """Evidence state of every patient with information frozen at time t."""
    C = cfg.censor_limit_min
    if not 0.0 <= t <= C:
        raise EvaluationError(f"landmark must lie in [0, {C}]")
    states = []
    for i in range(data.n):
        if data.voided[i] == 1:
            if data.censored[i] == 0 and data.t_min[i] <= t:
                states.append(EvidenceState.voided_at(float(data.t_min[i])))
            elif data.t_min[i] > t:
                states.append(EvidenceState.not_yet(t))
            else:  # censored patient at or past the horizon
                states.append(EvidenceState.voided_censored())
        else:
            if t < C:
                states.append(EvidenceState.not_yet(t))
            else:
                states.append(EvidenceState.not_observed())
    return states


def landmark_probabilities(draws: PosteriorDraws, data: PreparedDataset,
                           t: float, cfg: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-mean admission probability and outcome for every patient at
    landmark time t."""
    theta = constrained_draws(draws, cfg)
    states = landmark_states(data, t, cfg)
    X = data.covariates
    S = theta.shape[0]
    p_hat = np.zeros(data.n)

    rho0, rho1 = theta[:, 0], theta[:, 1]
    mu0, mu1 = theta[:, 2], theta[:, 3]
    s0, s1 = theta[:, 4], theta[:, 5]
    C = cfg.censor_limit_min

    base = {}  # per-draw logit offsets shared across rows of the same kind
    base["not_observed"] = np.log((1 - rho1) / (1 - rho0))
    base["voided_censored"] = (np.log(rho1 / rho0)
                               + log_normal_sf((C - mu1) / s1)
                               - log_normal_sf((C - mu0) / s0))
    base["not_yet"] = (np.logaddexp(np.log1p(-rho1),
                                    np.log(rho1) + log_normal_sf((t - mu1) / s1))
                       - np.logaddexp(np.log1p(-rho0),
                                      np.log(rho0) + log_normal_sf((t - mu0) / s0)))

    kinds = np.array([s.kind for s in states])
    xb = X @ theta[:, 6:].T  # (n, S)
    for kind in ("not_observed", "voided_censored", "not_yet"):
        idx = np.flatnonzero(kinds == kind)
        if idx.size:
            p_hat[idx] = inv_logit(base[kind][None, :] + xb[idx]).mean(axis=1)

    idx_v = np.flatnonzero(kinds == "voided_at")
    if idx_v.size:
        tv = data.t_min[idx_v]
        cv = np.zeros(idx_v.size, dtype=np.int8)
        Xv = X[idx_v]
        acc = np.zeros(idx_v.size)
        for start in range(0, S, _CHUNK):
            block = theta[start:start + _CHUNK]
            logits = observation_logit_matrix(block, tv, cv, Xv, cfg)
            acc += inv_logit(logits).sum(axis=0)
        p_hat[idx_v] = acc / S

    return p_hat, data.outcome.astype(int)


# ---------------------------------------------------------------------------
# Scalar metrics
# ---------------------------------------------------------------------------

def auc(p_hat, y) -> float:
    """Mann-Whitney AUC with ties counted half."""
    p_hat = np.asarray(p_hat, dtype=float)
    y = np.asarray(y, dtype=int)
    n1 = int((y == 1).sum())
    n0 = int((y == 0).sum())
    if n1 == 0 or n0 == 0:
        raise EvaluationError("undefined AUC: need both classes")
    from scipy.stats import rankdata
    ranks = rankdata(p_hat, method="average")
    r1 = ranks[y == 1].sum()
    return float((r1 - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def brier(p_hat, y) -> float:
    p_hat = np.asarray(p_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if p_hat.size == 0:
        raise EvaluationError("empty input")
    return float(np.mean((p_hat - y) ** 2))


def ece10(p_hat, y) -> float:
    """Expected calibration error over 10 equal-width probability bins."""
    p_hat = np.asarray(p_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if p_hat.size == 0:
        raise EvaluationError("empty input")
    bins = np.clip((p_hat * 10).astype(int), 0, 9)
    total = 0.0
    for b in range(10):
        mask = bins == b
        nb = int(mask.sum())
        if nb:
            total += (nb / p_hat.size) * abs(p_hat[mask].mean() - y[mask].mean())
    return float(total)


def _newton_logistic(features: np.ndarray, y: np.ndarray, offset: np.ndarray,
                     tol: float = 1e-10, max_iter: int = 100) -> np.ndarray:
    """Newton-Raphson MLE for logistic regression with a fixed offset."""
    n, k = features.shape
    coef = np.zeros(k)
    for _ in range(max_iter):
        eta = offset + features @ coef
        p = inv_logit(eta)
        grad = features.T @ (y - p)
        if np.linalg.norm(grad) < tol:
            return coef
        w = np.maximum(p * (1 - p), 1e-12)
        hess = (features * w[:, None]).T @ features
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise EvaluationError(f"singular Hessian in logistic fit: {exc}") from exc
        coef = coef + step
    raise EvaluationError(
        f"logistic fit did not converge in {max_iter} iterations "
        f"(|grad| = {np.linalg.norm(grad):.3g}, coef = {coef})")


def _check_separation(ell: np.ndarray, y: np.ndarray):
    if ell[y == 0].size and ell[y == 1].size:
        if ell[y == 0].max() < ell[y == 1].min() or ell[y == 1].max() < ell[y == 0].min():
            raise EvaluationError("separation")


def calibration_fit(p_hat, y) -> tuple[float, float, float]:
    """Calibration-in-the-large intercept plus (slope, intercept) of the
    logistic refit of outcomes on predicted log-odds."""
    p_hat = np.clip(np.asarray(p_hat, dtype=float), PROB_CLAMP, 1 - PROB_CLAMP)
    y = np.asarray(y, dtype=float)
    if not (np.any(y == 0) and np.any(y == 1)):
        raise EvaluationError("both classes required for calibration fit")
    ell = logit(p_hat)
    _check_separation(ell, y)
    ones = np.ones((y.size, 1))
    citl = _newton_logistic(ones, y, offset=ell)[0]
    two = _newton_logistic(np.column_stack([ones, ell]), y,
                           offset=np.zeros(y.size))
    return float(citl), float(two[1]), float(two[0])


def platt_recalibrate(p_train, y_train, p_apply) -> tuple[float, float, np.ndarray]:
    """Two-parameter logistic recalibration fitted on (p_train, y_train) and
    applied to p_apply."""
    _, beta, alpha = calibration_fit(p_train, y_train)
    p_apply = np.clip(np.asarray(p_apply, dtype=float), PROB_CLAMP, 1 - PROB_CLAMP)
    p_star = inv_logit(alpha + beta * logit(p_apply))
    return alpha, beta, p_star


# ---------------------------------------------------------------------------
# Decision curves
# ---------------------------------------------------------------------------

@dataclass
class DecisionCurve:
    thresholds: np.ndarray
    nb_model: np.ndarray
    nb_admit_all: np.ndarray
    nb_admit_none: np.ndarray
    delta_nb: np.ndarray = field(default=None)
    delta_low: np.ndarray = field(default=None)
    delta_high: np.ndarray = field(default=None)

    def as_dict(self) -> dict:
        out = {
            "thresholds": self.thresholds.tolist(),
            "nb_model": self.nb_model.tolist(),
            "nb_admit_all": self.nb_admit_all.tolist(),
            "nb_admit_none": self.nb_admit_none.tolist(),
        }
        if self.delta_nb is not None:
            out["delta_nb"] = self.delta_nb.tolist()
            out["delta_low"] = self.delta_low.tolist()
            out["delta_high"] = self.delta_high.tolist()
        return out


def default_thresholds() -> np.ndarray:
    return np.round(np.arange(0.10, 0.601, 0.01), 10)


def _net_benefit(p_hat, y, thresholds) -> np.ndarray:
    n = y.size
    odds = thresholds / (1.0 - thresholds)
    nb = np.empty(thresholds.size)
    for i, pt in enumerate(thresholds):
        pos = p_hat >= pt
        tp = float(np.sum(pos & (y == 1)))
        fp = float(np.sum(pos & (y == 0)))
        nb[i] = tp / n - (fp / n) * odds[i]
    return nb


def decision_curve(p_hat, y, thresholds=None, p_hat_baseline=None,
                   bootstrap: int = 2000, seed: int = 0) -> DecisionCurve:
    """Net benefit across thresholds, with admit-all/none references and a
    paired percentile-bootstrap CI on the model-minus-baseline difference."""
    p_hat = np.asarray(p_hat, dtype=float)
    y = np.asarray(y, dtype=int)
    thresholds = default_thresholds() if thresholds is None else np.asarray(
        thresholds, dtype=float)
    if np.any((thresholds <= 0) | (thresholds >= 1)):
        raise EvaluationError("thresholds must lie strictly inside (0, 1)")

    prevalence = float(y.mean())
    odds = thresholds / (1.0 - thresholds)
    curve = DecisionCurve(
        thresholds=thresholds,
        nb_model=_net_benefit(p_hat, y, thresholds),
        nb_admit_all=prevalence - (1.0 - prevalence) * odds,
        nb_admit_none=np.zeros(thresholds.size),
    )
    if p_hat_baseline is not None:
        p_base = np.asarray(p_hat_baseline, dtype=float)
        curve.delta_nb = curve.nb_model - _net_benefit(p_base, y, thresholds)
        rng = np.random.default_rng(seed)
        deltas = np.empty((bootstrap, thresholds.size))
        n = y.size
        for b in range(bootstrap):
            idx = rng.integers(0, n, n)
            deltas[b] = (_net_benefit(p_hat[idx], y[idx], thresholds)
                         - _net_benefit(p_base[idx], y[idx], thresholds))
        curve.delta_low, curve.delta_high = np.percentile(deltas, [2.5, 97.5], axis=0)
    return curve


# ---------------------------------------------------------------------------
# Landmark report and jitter robustness
# ---------------------------------------------------------------------------

@dataclass
class LandmarkReport:
    landmarks: list
    n_t: list
    auc: list
    brier: list
    cal_intercept: list
    cal_slope: list
    ece10: list

    def as_dict(self) -> dict:
        return {
            "landmarks": list(self.landmarks),
            "n_t": [int(v) for v in self.n_t],
            "auc": [float(v) for v in self.auc],
            "brier": [float(v) for v in self.brier],
            "cal_intercept": [float(v) for v in self.cal_intercept],
            "cal_slope": [float(v) for v in self.cal_slope],
            "ece10": [float(v) for v in self.ece10],
        }


def landmark_report(draws: PosteriorDraws, data: PreparedDataset,
                    cfg: ModelConfig,
                    landmarks=LANDMARKS_MIN) -> LandmarkReport:
    rows = {k: [] for k in ("n_t", "auc", "brier", "cal_intercept", "cal_slope",
                            "ece10")}
    for t in landmarks:
        p_hat, y = landmark_probabilities(draws, data, float(t), cfg)
        rows["n_t"].append(len(y))
        rows["auc"].append(auc(p_hat, y))
        rows["brier"].append(brier(p_hat, y))
        citl, slope, _ = calibration_fit(p_hat, y)
        rows["cal_intercept"].append(citl)
        rows["cal_slope"].append(slope)
        rows["ece10"].append(ece10(p_hat, y))
    return LandmarkReport(landmarks=list(landmarks), **rows)


def jitter_dataset(data: PreparedDataset, delta: float,
                   rng: np.random.Generator) -> PreparedDataset:
    """Perturb raw voiding times by Uniform(-delta, delta), clamp at zero and
    re-censor; everything else is untouched."""
    if delta == 0.0:
        return data
    C = data.censor_limit_min
    t_raw = data.ttu_raw_min.copy()
    voided = data.voided == 1
    noise = rng.uniform(-delta, delta, size=data.n)
    t_raw[voided] = np.maximum(t_raw[voided] + noise[voided], 0.0)
    t_min = data.t_min.copy()
    censored = data.censored.copy()
    t_min[voided] = np.minimum(t_raw[voided], C)
    censored[voided] = (t_raw[voided] > C).astype(np.int8)
    return replace(data, t_min=t_min, censored=censored, ttu_raw_min=t_raw)


def jitter_robustness(data: PreparedDataset, draws: PosteriorDraws,
                      cfg: ModelConfig, deltas=(5.0, 10.0), seed: int = 0,
                      landmarks=LANDMARKS_MIN,
                      calibration_landmarks=(120.0, 300.0)) -> dict:
    """Landmark metrics recomputed from the fitted posterior under timing
    jitter; the delta = 0 row is the unjittered reference."""
    table = {"deltas": [0.0] + [float(d) for d in deltas], "rows": []}
    for k, delta in enumerate(table["deltas"]):
        rng = np.random.default_rng(seed + k)
        jittered = jitter_dataset(data, delta, rng)
        row = {"delta": delta, "auc": {}, "brier": {}, "cal_intercept": {},
               "cal_slope": {}}
        for t in landmarks:
            p_hat, y = landmark_probabilities(draws, jittered, float(t), cfg)
            row["auc"][str(int(t))] = auc(p_hat, y)
            row["brier"][str(int(t))] = brier(p_hat, y)
            if t in calibration_landmarks:
                citl, slope, _ = calibration_fit(p_hat, y)
                row["cal_intercept"][str(int(t))] = citl
                row["cal_slope"][str(int(t))] = slope
        table["rows"].append(row)
    return table
