"""Convergence and energy diagnostics for multi-chain posterior draws.

Rank-normalized split R-hat, Geyer-truncated bulk/tail effective sample
sizes, MCSE of the mean, energy fraction of missing information, and pooled
per-chain rank histograms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .nuts import PosteriorDraws

EBFMI_ADEQUATE = 0.3
RHAT_SERVE_LIMIT = 1.05
DIVERGENCE_FAIL_FRACTION = 0.25


class DiagnosticsError(ValueError):
    pass


def _split_chains(draws: np.ndarray) -> np.ndarray:
    """Stack first/second halves of each chain as separate chains."""
    _, n = draws.shape
    half = n // 2
    return np.vstack([draws[:, :half], draws[:, n - half:]])


def _z_scale(draws: np.ndarray) -> np.ndarray:
    """Rank-normalize pooled values back onto a normal scale."""
    ranks = stats.rankdata(draws, method="average").reshape(draws.shape)
    return stats.norm.ppf((ranks - 0.5) / draws.size)


def _basic_rhat(draws: np.ndarray) -> float:
    m, n = draws.shape
    chain_means = draws.mean(axis=1)
    within = draws.var(axis=1, ddof=1).mean()
    between = n * chain_means.var(ddof=1)
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def split_rhat(draws: np.ndarray) -> float:
    """Rank-normalized split R-hat over a (chains, draws) array.

    Constant input returns 1.0 by convention (no variance to compare).
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[0] < 2 or draws.shape[1] < 4:
        raise DiagnosticsError("need >= 2 chains and >= 4 draws per chain")
    if np.all(draws == draws.flat[0]):
        return 1.0
    return _basic_rhat(_z_scale(_split_chains(draws)))


def _geyer_ess(draws: np.ndarray) -> float:
    """ESS via per-chain autocovariance with the initial-monotone truncation."""
    m, n = draws.shape
    acov = np.empty((m, n))
    for c in range(m):
        x = draws[c] - draws[c].mean()
        full = np.correlate(x, x, mode="full")[n - 1:]
        acov[c] = full / n
    chain_means = draws.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += chain_means.var(ddof=1)
    if var_plus == 0.0:
        return float(m * n)

    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 2 and (rho_even + rho_odd) >= 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        rho[t + 1] = rho_even
        if (rho_even + rho_odd) >= 0.0:
            rho[t + 2] = rho_odd
        t += 2
    max_t = t
    t = 1
    while t <= max_t - 2:
        if (rho[t + 1] + rho[t + 2]) > (rho[t - 1] + rho[t]):
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    tau = -1.0 + 2.0 * rho[:max_t].sum() + rho[max_t + 1: max_t + 2].sum()
    return float(m * n / max(tau, 1.0 / (m * n)))


def ess(draws: np.ndarray, kind: str = "bulk") -> float:
    """Effective sample size; bulk on rank-normalized split chains, tail as
    the minimum over the 5%/95% quantile indicator transforms."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[0] < 2 or draws.shape[1] < 4:
        raise DiagnosticsError("need >= 2 chains and >= 4 draws per chain")
    if np.all(draws == draws.flat[0]):
        return float(draws.size)
    if kind == "bulk":
        return _geyer_ess(_z_scale(_split_chains(draws)))
    if kind == "tail":
        out = []
        for prob in (0.05, 0.95):
            q = np.quantile(draws, prob)
            indicator = (draws <= q).astype(float)
            if np.all(indicator == indicator.flat[0]):
                out.append(float(draws.size))
            else:
                out.append(_geyer_ess(_z_scale(_split_chains(indicator))))
        return min(out)
    raise DiagnosticsError(f"unknown ess kind {kind!r}")


def mcse_mean(draws: np.ndarray) -> float:
    """Monte Carlo standard error of the posterior mean: sd / sqrt(ESS_bulk)."""
    draws = np.asarray(draws, dtype=float)
    sd = float(draws.std(ddof=1))
    if sd == 0.0:
        return 0.0
    return sd / np.sqrt(ess(draws, "bulk"))


def ebfmi(energy: np.ndarray) -> float:
    """Energy fraction of missing information for one chain's energy series."""
    energy = np.asarray(energy, dtype=float)
    if energy.size < 2:
        raise DiagnosticsError("need >= 2 energy values")
    var = energy.var()
    if var == 0.0:
        raise DiagnosticsError("degenerate energy series")
    return float(np.mean(np.diff(energy) ** 2) / var)


def rank_histogram(draws: np.ndarray, bins: int = 20) -> np.ndarray:
    """Per-chain histogram of pooled ranks, shape (chains, bins).

    Ties are broken by stable order so the counts are deterministic.
    """
    draws = np.asarray(draws, dtype=float)
    m, n = draws.shape
    if bins > m * n:
        raise DiagnosticsError("too many bins")
    ranks = stats.rankdata(draws, method="ordinal").reshape(m, n)
    edges = np.linspace(0, m * n, bins + 1)
    counts = np.empty((m, bins), dtype=int)
    for c in range(m):
        counts[c] = np.histogram(ranks[c] - 0.5, bins=edges)[0]
    return counts


@dataclass
class DiagnosticsReport:
    param_names: list
    rhat: np.ndarray
    ess_bulk: np.ndarray
    ess_tail: np.ndarray
    mcse_mean: np.ndarray
    ebfmi: np.ndarray
    divergence_count: int
    divergence_fraction: float
    treedepth_saturation: int
    rank_histograms: np.ndarray  # [params, chains, bins]
    mean_accept: float
    failed: bool
    mu1_clamp_count: int = 0

    @property
    def max_rhat(self) -> float:
        return float(np.max(self.rhat))

    def as_dict(self) -> dict:
        return {
            "param_names": list(self.param_names),
            "rhat": [float(v) for v in self.rhat],
            "ess_bulk": [float(v) for v in self.ess_bulk],
            "ess_tail": [float(v) for v in self.ess_tail],
            "mcse_mean": [float(v) for v in self.mcse_mean],
            "ebfmi": [float(v) for v in self.ebfmi],
            "divergence_count": int(self.divergence_count),
            "divergence_fraction": float(self.divergence_fraction),
            "treedepth_saturation": int(self.treedepth_saturation),
            "rank_histograms": self.rank_histograms.tolist(),
            "mean_accept": float(self.mean_accept),
            "failed": bool(self.failed),
            "mu1_clamp_count": int(self.mu1_clamp_count),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosticsReport":
        return cls(
            param_names=list(d["param_names"]),
            rhat=np.array(d["rhat"]),
            ess_bulk=np.array(d["ess_bulk"]),
            ess_tail=np.array(d["ess_tail"]),
            mcse_mean=np.array(d["mcse_mean"]),
            ebfmi=np.array(d["ebfmi"]),
            divergence_count=int(d["divergence_count"]),
            divergence_fraction=float(d["divergence_fraction"]),
            treedepth_saturation=int(d["treedepth_saturation"]),
            rank_histograms=np.array(d["rank_histograms"], dtype=int),
            mean_accept=float(d["mean_accept"]),
            failed=bool(d["failed"]),
            mu1_clamp_count=int(d.get("mu1_clamp_count", 0)),
        )


def compute_diagnostics(draws: PosteriorDraws, rank_bins: int = 20,
                        mu1_clamp_count: int = 0) -> DiagnosticsReport:
    """Full per-parameter convergence report for a sampling run.

    The report is marked failed when more than 25% of retained iterations
    were divergent.
    """
    P = draws.n_params
    rhats = np.empty(P)
    bulk = np.empty(P)
    tail = np.empty(P)
    mcse = np.empty(P)
    hists = np.empty((P, draws.n_chains, rank_bins), dtype=int)
    for j in range(P):
        series = draws.unconstrained[:, :, j]
        rhats[j] = split_rhat(series)
        bulk[j] = ess(series, "bulk")
        tail[j] = ess(series, "tail")
        mcse[j] = mcse_mean(series)
        hists[j] = rank_histogram(series, bins=rank_bins)
    bfmi = np.array([ebfmi(draws.energy[c]) for c in range(draws.n_chains)])
    div_count = draws.divergence_count()
    div_frac = div_count / draws.divergent.size
    return DiagnosticsReport(
        param_names=list(draws.param_names),
        rhat=rhats,
        ess_bulk=bulk,
        ess_tail=tail,
        mcse_mean=mcse,
        ebfmi=bfmi,
        divergence_count=div_count,
        divergence_fraction=float(div_frac),
        treedepth_saturation=draws.treedepth_saturation(),
        rank_histograms=hists,
        mean_accept=float(draws.accept_prob.mean()),
        failed=div_frac > DIVERGENCE_FAIL_FRACTION,
        mu1_clamp_count=mu1_clamp_count,
    )
