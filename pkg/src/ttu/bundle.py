"""Fitting pipeline and on-disk model bundles.

A bundle directory holds everything the prediction service and the evaluation
commands need: manifest, per-chain draw CSVs (17 significant digits, so the
round trip is bit-exact), the diagnostics report, and the training-data
cumulative curve.
"""

from __future__ import annotations

import csv
import datetime
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import PreparedDataset, PatientRecord, apply_exclusions, prepare_dataset
from .diagnostics import RHAT_SERVE_LIMIT, DiagnosticsReport, compute_diagnostics
from .model import ModelConfig, TTUPosterior, constrained_from_vector
from .nuts import PosteriorDraws, SamplerConfig, nuts_sample
from .predictive import CumulativeCurve, cumulative_curve

FORMAT_VERSION = 1
SERVING_MAX_DRAWS = 2000

MANIFEST_NAME = "manifest.json"
DIAGNOSTICS_NAME = "diagnostics.json"
CURVE_CSV_NAME = "curve.csv"
CURVE_META_NAME = "curve_meta.json"


class BundleError(RuntimeError):
    pass


def _chain_csv_name(chain: int) -> str:
    return f"chain_{chain}.csv"


def _write_chain_csv(path: Path, draws: PosteriorDraws, chain: int) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter"] + list(draws.param_names)
                        + ["energy", "accept_prob", "tree_depth", "divergent"])
        for it in range(draws.n_draws):
            row = [str(it)]
            row += [format(v, ".17g") for v in draws.unconstrained[chain, it]]
            row += [format(draws.energy[chain, it], ".17g"),
                    format(draws.accept_prob[chain, it], ".17g"),
                    str(int(draws.tree_depth[chain, it])),
                    str(int(draws.divergent[chain, it]))]
            writer.writerow(row)


def _read_chain_csv(path: Path, param_names: list) -> dict:
    draws, energy, accept, depth, div = [], [], [], [], []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            draws.append([float(row[p]) for p in param_names])
            energy.append(float(row["energy"]))
            accept.append(float(row["accept_prob"]))
            depth.append(int(row["tree_depth"]))
            div.append(bool(int(row["divergent"])))
    return {
        "draws": np.array(draws), "energy": np.array(energy),
        "accept": np.array(accept), "depth": np.array(depth, dtype=np.int16),
        "divergent": np.array(div, dtype=bool),
    }


@dataclass
class ModelBundle:
    path: Path
    manifest: dict
    draws: PosteriorDraws
    diagnostics: DiagnosticsReport
    curve: Optional[CumulativeCurve]

    @property
    def model_cfg(self) -> ModelConfig:
        mc = self.manifest["model_config"]
        return ModelConfig(censor_limit_min=mc["censor_limit_min"],
                           epsilon=mc["epsilon"],
                           prior_t_mean=mc["prior_t_mean"],
                           prior_scale=mc["prior_scale"])

    @property
    def covariates(self) -> bool:
        return self.manifest["covariates"] == "age-sex"

    @property
    def model_id(self) -> str:
        return self.manifest["model_id"]

    @property
    def age_mean(self) -> float:
        return self.manifest["prepared_summary"]["age_mean"]

    @property
    def age_sd(self) -> float:
        return self.manifest["prepared_summary"]["age_sd"]

    def serving_table(self) -> tuple[np.ndarray, int]:
        """Constrained draw table thinned for request serving, plus stride."""
        thinned, stride = self.draws.thinned(SERVING_MAX_DRAWS)
        full = constrained_from_vector(thinned, self.model_cfg)
        if not self.covariates:
            full[:, 6:] = 0.0
        return full, stride

    def ensure_servable(self) -> None:
        if self.diagnostics.failed:
            raise BundleError("bundle diagnostics are marked FAILED")
        if self.diagnostics.max_rhat > RHAT_SERVE_LIMIT:
            raise BundleError(
                f"max R-hat {self.diagnostics.max_rhat:.3f} exceeds "
                f"{RHAT_SERVE_LIMIT}")

    def standardize_age(self, age_years: Optional[float]) -> tuple[float, int]:
        if age_years is None:
            return 0.0, 1
        return (float(age_years) - self.age_mean) / self.age_sd, 0

    def rebased_covariates(self, data: PreparedDataset) -> PreparedDataset:
        """Re-standardize a dataset's age with the bundle's training statistics
        so out-of-sample predictions use the fitted scale."""
        from dataclasses import replace
        age_std = np.zeros(data.n)
        obs = data.age_missing == 0
        age_std[obs] = (data.age_years_raw[obs] - self.age_mean) / self.age_sd
        return replace(data, age_std=age_std, age_mean=self.age_mean,
                       age_sd=self.age_sd)


def fit_bundle(records: list[PatientRecord], out_dir, sampler_cfg: SamplerConfig,
               censor_limit_min: float = 300.0, covariates: bool = True,
               curve_level: float = 0.95) -> ModelBundle:
    """Prepare, sample, diagnose, and persist a model bundle."""
    kept, tally = apply_exclusions(records)
    data = prepare_dataset(kept, censor_limit_min)
    model_cfg = ModelConfig.from_dataset(data)
    target = TTUPosterior(data, model_cfg, covariates=covariates)
    draws = nuts_sample(target, sampler_cfg)
    report = compute_diagnostics(draws, mu1_clamp_count=target.clamp_count)
    curve = cumulative_curve(draws, data, model_cfg, level=curve_level)
    return write_bundle(out_dir, data, model_cfg, sampler_cfg, draws, report,
                        curve, covariates=covariates, exclusions=tally.as_dict())


def write_bundle(out_dir, data: PreparedDataset, model_cfg: ModelConfig,
                 sampler_cfg: SamplerConfig, draws: PosteriorDraws,
                 report: DiagnosticsReport, curve: Optional[CumulativeCurve],
                 covariates: bool = True,
                 exclusions: Optional[dict] = None) -> ModelBundle:
    """Persist an already-computed fit as a bundle directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    manifest = {
        "format_version": FORMAT_VERSION,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "sampler_config": {
            "chains": sampler_cfg.chains, "warmup": sampler_cfg.warmup,
            "draws": sampler_cfg.draws, "target_accept": sampler_cfg.target_accept,
            "max_treedepth": sampler_cfg.max_treedepth, "seed": sampler_cfg.seed,
        },
        "chain_seeds": [sampler_cfg.seed ^ c for c in range(sampler_cfg.chains)],
        "model_config": {
            "censor_limit_min": model_cfg.censor_limit_min,
            "epsilon": model_cfg.epsilon,
            "prior_t_mean": model_cfg.prior_t_mean,
            "prior_scale": model_cfg.prior_scale,
        },
        "covariates": "age-sex" if covariates else "none",
        "param_names": list(draws.param_names),
        "dataset_digest": data.digest(),
        "exclusions": exclusions or {},
        "prepared_summary": {
            "n": data.n,
            "n_voided": int(data.voided.sum()),
            "age_mean": data.age_mean,
            "age_sd": data.age_sd,
            "t_scale_min": data.t_scale_min,
            "sex_encoding": {"F": 0, "M": 1},
        },
        "step_size": [float(v) for v in draws.step_size],
        "mass_diag": draws.mass_diag.tolist(),
        "serving_max_draws": SERVING_MAX_DRAWS,
        "diagnostics_summary": {
            "max_rhat": report.max_rhat,
            "failed": report.failed,
            "divergence_count": report.divergence_count,
        },
    }
    manifest["model_id"] = hashlib.sha256(
        json.dumps(manifest, sort_keys=True).encode()).hexdigest()[:16]

    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    (out / DIAGNOSTICS_NAME).write_text(json.dumps(report.as_dict(), indent=2))
    for c in range(draws.n_chains):
        _write_chain_csv(out / _chain_csv_name(c), draws, c)
    if curve is not None:
        curve.to_csv(out / CURVE_CSV_NAME)
        curve.to_json_sidecar(out / CURVE_META_NAME)
    return ModelBundle(path=out, manifest=manifest, draws=draws,
                       diagnostics=report, curve=curve)


def load_bundle(path) -> ModelBundle:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise BundleError(f"no bundle manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    sc = manifest["sampler_config"]
    cfg = SamplerConfig(chains=sc["chains"], warmup=sc["warmup"], draws=sc["draws"],
                        target_accept=sc["target_accept"],
                        max_treedepth=sc["max_treedepth"], seed=sc["seed"])
    param_names = manifest["param_names"]
    chains = []
    for c in range(cfg.chains):
        chains.append(_read_chain_csv(path / _chain_csv_name(c), param_names))
    draws = PosteriorDraws(
        param_names=param_names,
        unconstrained=np.stack([ch["draws"] for ch in chains]),
        energy=np.stack([ch["energy"] for ch in chains]),
        accept_prob=np.stack([ch["accept"] for ch in chains]),
        tree_depth=np.stack([ch["depth"] for ch in chains]),
        divergent=np.stack([ch["divergent"] for ch in chains]),
        step_size=np.array(manifest["step_size"]),
        mass_diag=np.array(manifest["mass_diag"]),
        config=cfg,
    )
    report = DiagnosticsReport.from_dict(
        json.loads((path / DIAGNOSTICS_NAME).read_text()))
    curve = None
    if (path / CURVE_CSV_NAME).exists():
        curve = CumulativeCurve.from_csv(path / CURVE_CSV_NAME,
                                         path / CURVE_META_NAME)
    return ModelBundle(path=path, manifest=manifest, draws=draws,
                       diagnostics=report, curve=curve)
